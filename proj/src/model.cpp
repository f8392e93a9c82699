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

#include "salad/model.hpp"

#include <cmath>
#include <string>

#include "salad/error.hpp"
#include "salad/features.hpp"

namespace salad {

void AggregatorConfig::validate() const {
  if (m < 1) throw ConfigError("config: m must be >= 1, got " + std::to_string(m));
  if (l < 1) throw ConfigError("config: l must be >= 1, got " + std::to_string(l));
  if (g_dim < 0) throw ConfigError("config: g_dim must be >= 0, got " + std::to_string(g_dim));
  if (d < 1) throw ConfigError("config: d must be >= 1, got " + std::to_string(d));
  if (hidden < 1) throw ConfigError("config: hidden must be >= 1, got " + std::to_string(hidden));
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ConfigError("config: dropout_rate must be in [0, 1), got " + std::to_string(dropout_rate));
  }
  if (sinkhorn_iters < 1) {
    throw ConfigError("config: sinkhorn_iters must be >= 1, got " + std::to_string(sinkhorn_iters));
  }
}

void validate(const FeatureSet& features) {
  if (features.tokens.rows() < 1) throw ValidationError("feature set '" + features.id + "' has no tokens");
  if (features.global_token.size() != features.tokens.cols()) {
    throw ValidationError("feature set '" + features.id + "': global token length " +
                          std::to_string(features.global_token.size()) + " != token dim " +
                          std::to_string(features.tokens.cols()));
  }
  if (!features.tokens.allFinite() || !features.global_token.allFinite()) {
    throw ValidationError("feature set '" + features.id + "' contains non-finite values");
  }
}

namespace {

template <typename U, typename T>
Mlp2Weights<U> cast_mlp(const Mlp2Weights<T>& mlp) {
  return {mlp.w1.template cast<U>(), mlp.b1.template cast<U>(), mlp.w2.template cast<U>(),
          mlp.b2.template cast<U>()};
}

template <typename V, typename W>
std::vector<ParamView<V>> views_of(W& weights) {
  std::vector<ParamView<V>> out;
  out.reserve(13);
  auto add_mlp = [&out](auto& mlp, std::string_view w1, std::string_view b1, std::string_view w2,
                        std::string_view b2) {
    out.push_back({w1, mlp.w1.data(), 2, mlp.w1.rows(), mlp.w1.cols()});
    out.push_back({b1, mlp.b1.data(), 1, mlp.b1.size(), 1});
    out.push_back({w2, mlp.w2.data(), 2, mlp.w2.rows(), mlp.w2.cols()});
    out.push_back({b2, mlp.b2.data(), 1, mlp.b2.size(), 1});
  };
  add_mlp(weights.score, "score.w1", "score.b1", "score.w2", "score.b2");
  add_mlp(weights.reduction, "reduction.w1", "reduction.b1", "reduction.w2", "reduction.b2");
  add_mlp(weights.global, "global.w1", "global.b1", "global.w2", "global.b2");
  out.push_back({"dustbin.z", &weights.z, 0, 1, 1});
  return out;
}

template <typename T>
void check_mlp(const Mlp2Weights<T>& mlp, const char* name, Index in, Index hidden, Index out) {
  auto fail = [name](const std::string& what) {
    throw DimensionError(std::string("weights: ") + name + " " + what);
  };
  if (mlp.w1.rows() != hidden || mlp.w1.cols() != in) fail("w1 shape mismatch");
  if (mlp.b1.size() != hidden) fail("b1 size mismatch");
  if (mlp.w2.rows() != out || mlp.w2.cols() != hidden) fail("w2 shape mismatch");
  if (mlp.b2.size() != out) fail("b2 size mismatch");
  if (!mlp.w1.allFinite() || !mlp.b1.allFinite() || !mlp.w2.allFinite() || !mlp.b2.allFinite()) {
    throw NumericError(std::string("weights: ") + name + " has non-finite entries");
  }
}

// Standard uniform double from the top 53 bits; portable across standard
// libraries, unlike std::uniform_real_distribution.
double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void fill_uniform(Matrix<T>& w, Rng& rng) {
  const double bound = init_bound(w.cols());
  for (Index i = 0; i < w.size(); ++i) {
    w.data()[i] = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
  }
}

template <typename T>
Mlp2Weights<T> init_mlp(Index in, Index hidden, Index out, Rng& rng) {
  Mlp2Weights<T> mlp{Matrix<T>(hidden, in), Vector<T>::Zero(hidden), Matrix<T>(out, hidden),
                     Vector<T>::Zero(out)};
  fill_uniform(mlp.w1, rng);
  fill_uniform(mlp.w2, rng);
  return mlp;
}

}  // namespace

template <typename T>
template <typename U>
AggregatorWeights<U> AggregatorWeights<T>::cast() const {
  return {cast_mlp<U>(score), cast_mlp<U>(reduction), cast_mlp<U>(global), static_cast<U>(z)};
}

template <typename T>
std::vector<ParamView<T>> parameter_views(AggregatorWeights<T>& weights) {
  return views_of<T>(weights);
}

template <typename T>
std::vector<ParamView<const T>> parameter_views(const AggregatorWeights<T>& weights) {
  return views_of<const T>(weights);
}

template <typename T>
void validate_weights(const AggregatorWeights<T>& weights, const AggregatorConfig& config) {
  config.validate();
  check_mlp(weights.score, "score", config.d, config.hidden, config.m);
  check_mlp(weights.reduction, "reduction", config.d, config.hidden, config.l);
  check_mlp(weights.global, "global", config.d, config.hidden, config.g_dim);
  if (!std::isfinite(static_cast<double>(weights.z))) throw NumericError("weights: dustbin z is non-finite");
}

double init_bound(Index fan_in) {
  if (fan_in < 1) throw ConfigError("init: fan_in must be >= 1");
  return std::sqrt(1.0 / static_cast<double>(fan_in));
}

template <typename T>
AggregatorWeights<T> init_weights(const AggregatorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  AggregatorWeights<T> w;
  w.score = init_mlp<T>(config.d, config.hidden, config.m, rng);
  w.reduction = init_mlp<T>(config.d, config.hidden, config.l, rng);
  w.global = init_mlp<T>(config.d, config.hidden, config.g_dim, rng);
  w.z = T(0);
  return w;
}

template <typename T>
Vector<T> mlp2_forward(const Vector<T>& x, const Mlp2Weights<T>& mlp, const Vector<T>* hidden_mask) {
  if (x.size() != mlp.in_dim()) {
    throw DimensionError("mlp2_forward: input size " + std::to_string(x.size()) + " != " +
                         std::to_string(mlp.in_dim()));
  }
  Vector<T> h = (mlp.w1 * x + mlp.b1).cwiseMax(T(0));
  if (hidden_mask != nullptr) {
    if (hidden_mask->size() != h.size()) throw DimensionError("mlp2_forward: mask size mismatch");
    h = h.cwiseProduct(*hidden_mask);
  }
  return mlp.w2 * h + mlp.b2;
}

template <typename T>
Matrix<T> mlp2_forward_rows(const Matrix<T>& x, const Mlp2Weights<T>& mlp, const Matrix<T>* hidden_mask) {
  if (x.cols() != mlp.in_dim()) {
    throw DimensionError("mlp2_forward: input dim " + std::to_string(x.cols()) + " != " +
                         std::to_string(mlp.in_dim()));
  }
  Matrix<T> h(x.rows(), mlp.hidden_dim());
  h.noalias() = x * mlp.w1.transpose();
  h.rowwise() += mlp.b1.transpose();
  h = h.cwiseMax(T(0));
  if (hidden_mask != nullptr) {
    if (hidden_mask->rows() != h.rows() || hidden_mask->cols() != h.cols()) {
      throw DimensionError("mlp2_forward: mask shape mismatch");
    }
    h.array() *= hidden_mask->array();
  }
  Matrix<T> y(x.rows(), mlp.out_dim());
  y.noalias() = h * mlp.w2.transpose();
  y.rowwise() += mlp.b2.transpose();
  return y;
}

template <typename T>
Matrix<T> dropout_mask(double rate, Index rows, Index cols, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0, 1)");
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  Matrix<T> mask(rows, cols);
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = unit_uniform(rng) < rate ? T(0) : keep;
  }
  return mask;
}

#define SALAD_INSTANTIATE(T)                                                                         \
  template struct AggregatorWeights<T>;                                                              \
  template AggregatorWeights<float> AggregatorWeights<T>::cast<float>() const;                       \
  template AggregatorWeights<double> AggregatorWeights<T>::cast<double>() const;                     \
  template std::vector<ParamView<T>> parameter_views(AggregatorWeights<T>&);                         \
  template std::vector<ParamView<const T>> parameter_views(const AggregatorWeights<T>&);             \
  template void validate_weights(const AggregatorWeights<T>&, const AggregatorConfig&);              \
  template AggregatorWeights<T> init_weights<T>(const AggregatorConfig&);                            \
  template Vector<T> mlp2_forward(const Vector<T>&, const Mlp2Weights<T>&, const Vector<T>*);        \
  template Matrix<T> mlp2_forward_rows(const Matrix<T>&, const Mlp2Weights<T>&, const Matrix<T>*);   \
  template Matrix<T> dropout_mask<T>(double, Index, Index, Rng&);

SALAD_INSTANTIATE(float)
SALAD_INSTANTIATE(double)

#undef SALAD_INSTANTIATE

}  // namespace salad
