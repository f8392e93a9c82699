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
#include <iosfwd>
#include <span>
#include <vector>

#include "salad/features.hpp"
#include "salad/loss.hpp"
#include "salad/model.hpp"
#include "salad/tensor.hpp"

namespace salad {

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adaptive-moment state, one accumulator pair per parameter tensor.
template <typename T>
struct OptimizerState {
  AdamWParams hyper;
  std::vector<Vector<T>> first_moment;
  std::vector<Vector<T>> second_moment;
  std::int64_t step = 0;
};

/// Linear decay from lr0 at iteration 0 to final_fraction * lr0 at
/// total_iters. ConfigError unless 0 <= iter <= total_iters, total_iters >= 1.
double lr_at(std::int64_t iter, std::int64_t total_iters, double lr0, double final_fraction = 0.2);

/// One AdamW update in place. Weight decay multiplies the weights by
/// (1 - lr * weight_decay) before the bias-corrected moment step; it never
/// enters the moments. Moments are sized on the first call.
template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<const std::span<T>> params,
                std::span<const std::span<const T>> grads, double lr);

template <typename T>
void adamw_step(OptimizerState<T>& state, AggregatorWeights<T>& weights, const AggregatorWeights<T>& grads,
                double lr);

struct LabeledFeatures {
  FeatureSet features;
  int label = 0;
};

struct TrainParams {
  Index batch_places = 60;
  Index images_per_place = 4;
  double lr = 6e-5;
  double final_lr_fraction = 0.2;
  AdamWParams adamw;
  LossParams loss;
  std::uint64_t seed = 0;  // batch order and dropout
};

struct LossRecord {
  std::int64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

template <typename T>
struct TrainResult {
  AggregatorWeights<T> weights;
  std::vector<LossRecord> log;
  std::vector<double> epoch_mean_loss;
};

/// Groups `dataset` into places (first `images_per_place` items of each
/// label, places with fewer are skipped), then per epoch shuffles the
/// places and trains on batches of `batch_places` places: taped forward
/// in training mode, multi-similarity loss, backward, AdamW with the
/// linear schedule. Starts from init_weights(config) unless `initial` is
/// given. UsageError for an empty dataset or fewer than two usable places.
template <typename T>
TrainResult<T> train_run(std::span<const LabeledFeatures> dataset, const AggregatorConfig& config,
                         const TrainParams& params, int epochs, const AggregatorWeights<T>* initial = nullptr);

/// "iter,lr,loss" header followed by one line per record.
void write_loss_log(std::ostream& out, std::span<const LossRecord> log);

}  // namespace salad
