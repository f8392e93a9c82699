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

#include <span>

#include "salad/aggregation.hpp"
#include "salad/tensor.hpp"

namespace salad {

/// Multi-similarity loss parameters. `lambda` is the similarity threshold,
/// `epsilon` the pair-mining margin.
struct LossParams {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 0.0;
  double epsilon = 0.1;

  void validate() const;
};

/// Multi-similarity loss over cosine similarities S_ij = <D_i, D_j>.
///
/// For anchor i, positives p with S_ip < max_n S_in + eps and negatives n
/// with S_in > min_p S_ip - eps are mined; the anchor contributes
///   1/alpha log(1 + sum_p e^{-alpha (S_ip - lambda)})
///   + 1/beta log(1 + sum_n e^{beta (S_in - lambda)}).
/// The result averages over anchors with at least one mined pair and is 0
/// when nothing is mined. Fewer than two distinct labels -> UsageError.
template <typename T>
T ms_loss(std::span<const BasicDescriptor<T>> descriptors, std::span<const int> labels,
          const LossParams& params);

/// Same loss from a precomputed B x B similarity matrix. When `grad` is
/// non-null it receives dLoss/dS (only anchor rows are populated, so the
/// caller symmetrizes when S depends on both factors).
template <typename T>
T ms_loss_from_similarity(const Matrix<T>& similarity, std::span<const int> labels, const LossParams& params,
                          Matrix<T>* grad = nullptr);

}  // namespace salad
