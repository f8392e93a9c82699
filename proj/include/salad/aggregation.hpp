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

#include <string>

#include "salad/features.hpp"
#include "salad/model.hpp"
#include "salad/ot_assign.hpp"
#include "salad/tensor.hpp"

namespace salad {

/// Aggregated features, one row per cluster: m x l.
template <typename T>
struct ClusterMatrix {
  Matrix<T> values;
};

/// Unit-norm global descriptor laid out as [g | flat(V)], V row-major.
template <typename T>
struct BasicDescriptor {
  std::string id;
  Vector<T> values;
};

using Descriptor = BasicDescriptor<float>;

/// Dropout masks for one image in training mode.
template <typename T>
struct TrainingMasks {
  Matrix<T> score;      // n x hidden
  Matrix<T> reduction;  // n x hidden
};

template <typename T>
TrainingMasks<T> sample_training_masks(const AggregatorConfig& config, Index num_tokens, Rng& rng);

template <typename T>
Matrix<T> reduce_dims(const FeatureSet& features, const AggregatorWeights<T>& weights,
                      const AggregatorConfig& config, const Matrix<T>* reduction_mask = nullptr);

template <typename T>
Vector<T> project_global(const Vector<T>& global_token, const AggregatorWeights<T>& weights,
                         const AggregatorConfig& config);

/// V = P^T F, no centroid residuals.
template <typename T>
ClusterMatrix<T> aggregate_vlad(const Matrix<T>& assignment, const Matrix<T>& reduced);

/// L2-normalizes flat(V) and g separately (zero blocks stay zero),
/// concatenates [g | flat(V)] and normalizes the whole vector.
/// Throws DegenerateDescriptorError when both blocks are zero.
template <typename T>
BasicDescriptor<T> finalize_descriptor(const ClusterMatrix<T>& clusters, const Vector<T>& global,
                                       std::string id = {});

/// Full head: scores -> Sinkhorn -> dustbin drop, reduction, aggregation,
/// global projection, normalization. `masks` selects training mode.
template <typename T>
BasicDescriptor<T> forward_full(const FeatureSet& features, const AggregatorWeights<T>& weights,
                                const AggregatorConfig& config, const TrainingMasks<T>* masks = nullptr);

/// Training-mode convenience: samples fresh masks from `rng` when
/// `training` is set.
template <typename T>
BasicDescriptor<T> forward_full(const FeatureSet& features, const AggregatorWeights<T>& weights,
                                const AggregatorConfig& config, bool training, Rng& rng);

}  // namespace salad
