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

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "salad/tensor.hpp"

namespace salad {

using Rng = std::mt19937_64;

/// Shape and regularization hyperparameters of the aggregation head.
struct AggregatorConfig {
  Index m = 64;        // clusters
  Index l = 128;       // reduced token dimension
  Index g_dim = 256;   // projected global token dimension
  Index d = 768;       // backbone token dimension
  Index hidden = 512;  // hidden width of every 2-layer MLP
  float dropout_rate = 0.3f;
  int sinkhorn_iters = 3;
  std::uint64_t seed = 0;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;

  Index descriptor_dim() const { return m * l + g_dim; }

  friend bool operator==(const AggregatorConfig&, const AggregatorConfig&) = default;
};

/// y = W2 * relu(W1 * x + b1) + b2.
template <typename T>
struct Mlp2Weights {
  Matrix<T> w1;  // hidden x in
  Vector<T> b1;  // hidden
  Matrix<T> w2;  // out x hidden
  Vector<T> b2;  // out

  Index in_dim() const { return w1.cols(); }
  Index hidden_dim() const { return w1.rows(); }
  Index out_dim() const { return w2.rows(); }
};

template <typename T>
struct AggregatorWeights {
  Mlp2Weights<T> score;      // d -> m
  Mlp2Weights<T> reduction;  // d -> l
  Mlp2Weights<T> global;     // d -> g_dim
  T z = T(0);                // dustbin score

  template <typename U>
  AggregatorWeights<U> cast() const;
};

/// Flat view of one learnable tensor. `ndim` is 2 for weight matrices,
/// 1 for biases and 0 for the dustbin scalar.
template <typename T>
struct ParamView {
  std::string_view name;
  T* data;
  int ndim;
  Index rows;
  Index cols;

  Index size() const { return rows * cols; }
  std::span<T> values() const { return {data, static_cast<std::size_t>(size())}; }
};

/// Canonical tensor order: score, reduction, global MLPs (w1, b1, w2, b2
/// each), then "dustbin.z". The optimizer and the weight file rely on it.
template <typename T>
std::vector<ParamView<T>> parameter_views(AggregatorWeights<T>& weights);
template <typename T>
std::vector<ParamView<const T>> parameter_views(const AggregatorWeights<T>& weights);

/// Throws ConfigError/DimensionError unless every shape matches `config`,
/// and NumericError if any entry is non-finite.
template <typename T>
void validate_weights(const AggregatorWeights<T>& weights, const AggregatorConfig& config);

/// Weight matrices ~ U[-b, b] with b = sqrt(1 / fan_in); biases and z are 0.
/// Deterministic in `config.seed`; both precisions draw the same numbers.
template <typename T>
AggregatorWeights<T> init_weights(const AggregatorConfig& config);

double init_bound(Index fan_in);

template <typename T>
Vector<T> mlp2_forward(const Vector<T>& x, const Mlp2Weights<T>& mlp,
                       const Vector<T>* hidden_mask = nullptr);

/// Row-wise mlp2_forward over an (n x in) matrix; `hidden_mask`, when
/// given, is (n x hidden) and multiplies the post-ReLU activations.
template <typename T>
Matrix<T> mlp2_forward_rows(const Matrix<T>& x, const Mlp2Weights<T>& mlp,
                            const Matrix<T>* hidden_mask = nullptr);

/// Inverted dropout mask: 0 with probability `rate`, 1/(1-rate) otherwise.
template <typename T>
Matrix<T> dropout_mask(double rate, Index rows, Index cols, Rng& rng);

}  // namespace salad
