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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "salad/aggregation.hpp"
#include "salad/features.hpp"
#include "salad/loss.hpp"
#include "salad/model.hpp"
#include "salad/tensor.hpp"

// Reverse-mode differentiation over the handful of matrix operations the
// aggregation head and its loss are built from. Vectors are 1 x k rows.
namespace salad::ad {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Leaf that receives a gradient.
  Var variable(Mat value);
  /// Leaf that is treated as a constant.
  Var constant(Mat value);

  /// Records an op output. `backward` is dropped if no parent needs a
  /// gradient; it must route `grad_out` to parents through accumulate().
  Var record(Mat value, std::span<const Var> parents, BackwardFn backward);

  const Mat& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Seeds `output` with `upstream` and propagates to every node. Clears
  /// gradients of any previous pass.
  void backward(Var output, const Mat& upstream);
  /// Same, for a 1 x 1 output seeded with 1.
  void backward(Var output);

  /// Gradient of the last backward() output w.r.t. `v`. UsageError if `v`
  /// belongs to another tape or no backward pass has run.
  Mat grad(Var v) const;

  void accumulate(Var v, const Mat& contribution);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until something flows in
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool has_grads_ = false;
};

// --- primitive ops -------------------------------------------------------

/// x W^T + b, with x (n x in), W (out x in), b (1 x out).
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var relu(Tape<T>& tape, Var x);

/// Elementwise product.
template <typename T>
Var multiply(Tape<T>& tape, Var x, Var y);

/// [S | z 1_n] for a 1 x 1 z.
template <typename T>
Var append_constant_column(Tape<T>& tape, Var scores, Var z);

/// Plan of sinkhorn_assign, differentiated by unrolling every pass.
template <typename T>
Var sinkhorn(Tape<T>& tape, Var scores, int iters);

template <typename T>
Var drop_last_column(Tape<T>& tape, Var x);

/// a^T b.
template <typename T>
Var matmul_tn(Tape<T>& tape, Var a, Var b);

/// Row-major flattenings of a and b joined into one 1 x (|a| + |b|) row.
template <typename T>
Var concat_flat(Tape<T>& tape, Var a, Var b);

/// x / ||x||_F, or zeros (with zero gradient) when x = 0.
template <typename T>
Var normalize(Tape<T>& tape, Var x);

/// Stacks 1 x D rows into a B x D matrix.
template <typename T>
Var stack_rows(Tape<T>& tape, std::span<const Var> rows);

/// sum(w .* x) for a constant weight matrix; turns any op into a scalar
/// for gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Matrix<T>& weights);

/// Multi-similarity loss of a B x D matrix of unit-norm descriptor rows.
template <typename T>
Var ms_loss(Tape<T>& tape, Var descriptors, std::span<const int> labels, const LossParams& params);

// --- model composites ----------------------------------------------------

struct Mlp2Vars {
  Var w1, b1, w2, b2;
};

struct WeightVars {
  Mlp2Vars score, reduction, global;
  Var z;
};

template <typename T>
WeightVars register_weights(Tape<T>& tape, const AggregatorWeights<T>& weights);

/// Gradients of every tensor in the layout of AggregatorWeights.
template <typename T>
AggregatorWeights<T> weight_gradients(const Tape<T>& tape, const WeightVars& vars);

template <typename T>
Var mlp2(Tape<T>& tape, Var x, const Mlp2Vars& mlp, const Matrix<T>* hidden_mask = nullptr);

/// Taped forward_full; returns the 1 x D descriptor row.
template <typename T>
Var forward_full(Tape<T>& tape, const FeatureSet& features, const WeightVars& weights,
                 const AggregatorConfig& config, const TrainingMasks<T>* masks = nullptr);

}  // namespace salad::ad
