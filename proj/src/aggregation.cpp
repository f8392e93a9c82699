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

#include "salad/aggregation.hpp"

#include <string>
#include <utility>

#include "salad/error.hpp"

namespace salad {

namespace {

void check_dim(const char* op, Index got, Index want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": token dim " + std::to_string(got) + " != d " +
                         std::to_string(want));
  }
}

template <typename T>
void normalize_block(Eigen::Ref<Vector<T>> block) {
  const T norm = block.norm();
  if (norm > T(0)) block /= norm;
}

}  // namespace

template <typename T>
TrainingMasks<T> sample_training_masks(const AggregatorConfig& config, Index num_tokens, Rng& rng) {
  TrainingMasks<T> masks;
  masks.score = dropout_mask<T>(config.dropout_rate, num_tokens, config.hidden, rng);
  masks.reduction = dropout_mask<T>(config.dropout_rate, num_tokens, config.hidden, rng);
  return masks;
}

template <typename T>
Matrix<T> reduce_dims(const FeatureSet& features, const AggregatorWeights<T>& weights,
                      const AggregatorConfig& config, const Matrix<T>* reduction_mask) {
  check_dim("reduce_dims", features.dim(), config.d);
  return mlp2_forward_rows(Matrix<T>(features.tokens.template cast<T>()), weights.reduction, reduction_mask);
}

template <typename T>
Vector<T> project_global(const Vector<T>& global_token, const AggregatorWeights<T>& weights,
                         const AggregatorConfig& config) {
  check_dim("project_global", global_token.size(), config.d);
  return mlp2_forward(global_token, weights.global);
}

template <typename T>
ClusterMatrix<T> aggregate_vlad(const Matrix<T>& assignment, const Matrix<T>& reduced) {
  if (assignment.rows() != reduced.rows()) {
    throw DimensionError("aggregate_vlad: assignment has " + std::to_string(assignment.rows()) +
                         " rows, features have " + std::to_string(reduced.rows()));
  }
  ClusterMatrix<T> out{Matrix<T>(assignment.cols(), reduced.cols())};
  out.values.noalias() = assignment.transpose() * reduced;
  return out;
}

template <typename T>
BasicDescriptor<T> finalize_descriptor(const ClusterMatrix<T>& clusters, const Vector<T>& global, std::string id) {
  if (!clusters.values.allFinite() || !global.allFinite()) {
    throw NumericError("finalize_descriptor: non-finite input");
  }
  const Index g_dim = global.size();
  const Index v_dim = clusters.values.size();
  BasicDescriptor<T> out{std::move(id), Vector<T>(g_dim + v_dim)};
  out.values.head(g_dim) = global;
  // Row-major storage makes the raw buffer the cluster-major flattening.
  out.values.tail(v_dim) = Eigen::Map<const Vector<T>>(clusters.values.data(), v_dim);
  normalize_block<T>(out.values.head(g_dim));
  normalize_block<T>(out.values.tail(v_dim));
  const T norm = out.values.norm();
  if (!(norm > T(0))) throw DegenerateDescriptorError("finalize_descriptor: both blocks are zero");
  out.values /= norm;
  return out;
}

template <typename T>
BasicDescriptor<T> forward_full(const FeatureSet& features, const AggregatorWeights<T>& weights,
                                const AggregatorConfig& config, const TrainingMasks<T>* masks) {
  check_dim("forward_full", features.dim(), config.d);
  const Matrix<T> tokens = features.tokens.template cast<T>();
  const ScoreMatrix<T> scores = build_scores(tokens, weights, masks ? &masks->score : nullptr);
  const Assignment<T> assignment = sinkhorn_assign(scores, config.sinkhorn_iters);
  const Matrix<T> reduced = mlp2_forward_rows(tokens, weights.reduction, masks ? &masks->reduction : nullptr);
  const ClusterMatrix<T> clusters = aggregate_vlad(drop_dustbin(assignment), reduced);
  const Vector<T> global = project_global(Vector<T>(features.global_token.template cast<T>()), weights, config);
  return finalize_descriptor(clusters, global, features.id);
}

template <typename T>
BasicDescriptor<T> forward_full(const FeatureSet& features, const AggregatorWeights<T>& weights,
                                const AggregatorConfig& config, bool training, Rng& rng) {
  if (!training) return forward_full(features, weights, config, static_cast<const TrainingMasks<T>*>(nullptr));
  const TrainingMasks<T> masks = sample_training_masks<T>(config, features.num_tokens(), rng);
  return forward_full(features, weights, config, &masks);
}

#define SALAD_INSTANTIATE(T)                                                                                \
  template TrainingMasks<T> sample_training_masks<T>(const AggregatorConfig&, Index, Rng&);                 \
  template Matrix<T> reduce_dims(const FeatureSet&, const AggregatorWeights<T>&, const AggregatorConfig&,   \
                                 const Matrix<T>*);                                                         \
  template Vector<T> project_global(const Vector<T>&, const AggregatorWeights<T>&, const AggregatorConfig&); \
  template ClusterMatrix<T> aggregate_vlad(const Matrix<T>&, const Matrix<T>&);                             \
  template BasicDescriptor<T> finalize_descriptor(const ClusterMatrix<T>&, const Vector<T>&, std::string);  \
  template BasicDescriptor<T> forward_full(const FeatureSet&, const AggregatorWeights<T>&,                  \
                                           const AggregatorConfig&, const TrainingMasks<T>*);               \
  template BasicDescriptor<T> forward_full(const FeatureSet&, const AggregatorWeights<T>&,                  \
                                           const AggregatorConfig&, bool, Rng&);

SALAD_INSTANTIATE(float)
SALAD_INSTANTIATE(double)

#undef SALAD_INSTANTIATE

}  // namespace salad
