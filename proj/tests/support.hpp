// Copyright 2026 The SALAD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "salad/features.hpp"
#include "salad/model.hpp"
#include "salad/oracle.hpp"
#include "salad/tensor.hpp"

namespace salad::testing {

template <typename T = double>
Matrix<T> random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix<T> m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(normal(rng));
  return m;
}

template <typename T = double>
Vector<T> random_vector(Index size, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix<T>(size, 1, rng, scale).col(0);
}

inline Vector<float> random_unit(Index dim, std::mt19937_64& rng) {
  Vector<float> v = random_vector<double>(dim, rng).normalized().cast<float>();
  return v;
}

inline FeatureSet random_features(Index n, Index d, std::mt19937_64& rng, const std::string& id = "img") {
  FeatureSet f;
  f.id = id;
  f.tokens = random_matrix<float>(n, d, rng);
  f.global_token = random_vector<float>(d, rng);
  return f;
}

/// Randomizes every tensor (including biases and z) so no gradient is
/// trivially zero.
template <typename T>
AggregatorWeights<T> random_weights(const AggregatorConfig& config, std::mt19937_64& rng, double scale = 0.5) {
  AggregatorWeights<T> w = init_weights<T>(config);
  for (auto& view : parameter_views(w)) {
    for (T& x : view.values()) x = static_cast<T>(std::normal_distribution<double>(0.0, scale)(rng));
  }
  return w;
}

template <typename T>
oracle::DMatrix to_nested(const Matrix<T>& m) {
  oracle::DMatrix out(static_cast<std::size_t>(m.rows()), oracle::DVector(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out[i][j] = static_cast<double>(m(i, j));
  }
  return out;
}

template <typename T>
oracle::DVector to_std(const Vector<T>& v) {
  oracle::DVector out(static_cast<std::size_t>(v.size()));
  for (Index k = 0; k < v.size(); ++k) out[k] = static_cast<double>(v(k));
  return out;
}

inline double max_abs_diff(const Matrix<double>& a, const oracle::DMatrix& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  }
  return worst;
}

/// Central differences of a scalar function over every entry of a buffer.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, double* data, std::size_t size,
                                            double h = 1e-5) {
  std::vector<double> grad(size);
  for (std::size_t k = 0; k < size; ++k) {
    const double saved = data[k];
    data[k] = saved + h;
    const double up = f();
    data[k] = saved - h;
    const double down = f();
    data[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// max_k |a_k - f_k| / max(|a_k|, |f_k|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing finite-difference noise by ~0.
inline double max_relative_error(const double* analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

}  // namespace salad::testing

#include "salad/autodiff.hpp"

namespace salad::testing {

using OpBuilder = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

/// Projects the op output onto a random direction, backpropagates, and
/// compares every input gradient with central differences of the same
/// taped forward. Returns the worst relative error.
inline double op_gradient_error(const OpBuilder& op, std::vector<Matrix<double>> inputs, std::mt19937_64& rng,
                                double floor = 1e-6) {
  Matrix<double> direction;
  auto evaluate = [&](bool keep, ad::Tape<double>& tape, std::vector<ad::Var>& vars) {
    vars.clear();
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    ad::Var out = op(tape, vars);
    if (direction.size() == 0) {
      direction = random_matrix(tape.value(out).rows(), tape.value(out).cols(), rng);
    }
    ad::Var scalar = ad::weighted_sum(tape, out, direction);
    if (keep) tape.backward(scalar);
    return tape.value(scalar)(0, 0);
  };

  ad::Tape<double> tape;
  std::vector<ad::Var> vars;
  evaluate(true, tape, vars);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix<double> analytic = tape.grad(vars[k]);
    auto f = [&]() {
      ad::Tape<double> t;
      std::vector<ad::Var> v;
      return evaluate(false, t, v);
    };
    const auto numeric = numeric_gradient(f, inputs[k].data(), static_cast<std::size_t>(inputs[k].size()));
    worst = std::max(worst, max_relative_error(analytic.data(), numeric, floor));
  }
  return worst;
}

}  // namespace salad::testing
