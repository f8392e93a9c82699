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

#include "salad/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>

#include "salad/aggregation.hpp"
#include "salad/autodiff.hpp"
#include "salad/error.hpp"

namespace salad {

double lr_at(std::int64_t iter, std::int64_t total_iters, double lr0, double final_fraction) {
  if (total_iters < 1) throw ConfigError("lr_at: total_iters must be >= 1");
  if (iter < 0 || iter > total_iters) {
    throw ConfigError("lr_at: iter " + std::to_string(iter) + " outside [0, " + std::to_string(total_iters) + "]");
  }
  const double progress = static_cast<double>(iter) / static_cast<double>(total_iters);
  return lr0 * (1.0 - (1.0 - final_fraction) * progress);
}

template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<const std::span<T>> params,
                std::span<const std::span<const T>> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("adamw: params/grads count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) throw DimensionError("adamw: param/grad size mismatch");
    for (T g : grads[k]) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("adamw: non-finite gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Vector<T>::Zero(static_cast<Index>(p.size())));
      state.second_moment.push_back(Vector<T>::Zero(static_cast<Index>(p.size())));
    }
  } else if (state.first_moment.size() != params.size()) {
    throw DimensionError("adamw: optimizer state was built for a different parameter set");
  }

  const AdamWParams& h = state.hyper;
  ++state.step;
  const double bias1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * h.weight_decay;

  for (std::size_t k = 0; k < params.size(); ++k) {
    Vector<T>& m = state.first_moment[k];
    Vector<T>& v = state.second_moment[k];
    if (m.size() != static_cast<Index>(params[k].size())) throw DimensionError("adamw: moment shape mismatch");
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = static_cast<double>(grads[k][i]);
      const double mi = h.beta1 * static_cast<double>(m(i)) + (1.0 - h.beta1) * g;
      const double vi = h.beta2 * static_cast<double>(v(i)) + (1.0 - h.beta2) * g * g;
      m(i) = static_cast<T>(mi);
      v(i) = static_cast<T>(vi);
      double w = static_cast<double>(params[k][i]) * decay;
      w -= lr * (mi / bias1) / (std::sqrt(vi / bias2) + h.eps);
      params[k][i] = static_cast<T>(w);
    }
  }
}

template <typename T>
void adamw_step(OptimizerState<T>& state, AggregatorWeights<T>& weights, const AggregatorWeights<T>& grads,
                double lr) {
  const auto pv = parameter_views(weights);
  const auto gv = parameter_views(grads);
  std::vector<std::span<T>> params;
  std::vector<std::span<const T>> gradients;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    params.push_back(pv[k].values());
    gradients.push_back(gv[k].values());
  }
  adamw_step<T>(state, params, gradients, lr);
}

namespace {

struct Place {
  int label;
  std::vector<const FeatureSet*> images;
};

std::vector<Place> group_places(std::span<const LabeledFeatures> dataset, Index images_per_place) {
  std::map<int, std::vector<const FeatureSet*>> by_label;
  for (const auto& item : dataset) by_label[item.label].push_back(&item.features);
  std::vector<Place> places;
  for (auto& [label, images] : by_label) {
    if (static_cast<Index>(images.size()) < images_per_place) continue;
    images.resize(static_cast<std::size_t>(images_per_place));
    places.push_back({label, std::move(images)});
  }
  return places;
}

// Place-index batches for one epoch; a trailing single place joins the
// previous batch so every batch has at least two labels.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t num_places, Index batch_places, Rng& rng) {
  std::vector<std::size_t> order(num_places);
  for (std::size_t k = 0; k < num_places; ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto step = static_cast<std::size_t>(batch_places);
  for (std::size_t start = 0; start < num_places; start += step) {
    const std::size_t stop = std::min(num_places, start + step);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].insert(batches[batches.size() - 2].end(), batches.back().begin(),
                                       batches.back().end());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

template <typename T>
TrainResult<T> train_run(std::span<const LabeledFeatures> dataset, const AggregatorConfig& config,
                         const TrainParams& params, int epochs, const AggregatorWeights<T>* initial) {
  config.validate();
  params.loss.validate();
  if (dataset.empty()) throw UsageError("train: empty dataset");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (params.batch_places < 2) throw ConfigError("train: batch_places must be >= 2");
  if (params.images_per_place < 2) throw ConfigError("train: images_per_place must be >= 2");

  const std::vector<Place> places = group_places(dataset, params.images_per_place);
  if (places.size() < 2) {
    throw UsageError("train: need at least two places with " + std::to_string(params.images_per_place) +
                     " images each, found " + std::to_string(places.size()));
  }

  TrainResult<T> result;
  result.weights = initial != nullptr ? *initial : init_weights<T>(config);
  validate_weights(result.weights, config);
  if (epochs == 0) return result;

  Rng rng(params.seed);
  OptimizerState<T> state;
  state.hyper = params.adamw;

  const auto step = static_cast<std::size_t>(params.batch_places);
  std::size_t batches_per_epoch = (places.size() + step - 1) / step;
  if (batches_per_epoch > 1 && places.size() % step == 1) --batches_per_epoch;
  const auto total_iters = static_cast<std::int64_t>(batches_per_epoch) * epochs;

  std::int64_t iter = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto batches = epoch_batches(places.size(), params.batch_places, rng);
    for (const auto& batch : batches) {
      ad::Tape<T> tape;
      const ad::WeightVars vars = ad::register_weights(tape, result.weights);
      std::vector<ad::Var> rows;
      std::vector<int> labels;
      for (std::size_t place_index : batch) {
        const Place& place = places[place_index];
        for (const FeatureSet* image : place.images) {
          const TrainingMasks<T> masks = sample_training_masks<T>(config, image->num_tokens(), rng);
          rows.push_back(ad::forward_full(tape, *image, vars, config, &masks));
          labels.push_back(place.label);
        }
      }
      const ad::Var loss = ad::ms_loss(tape, ad::stack_rows<T>(tape, rows), labels, params.loss);
      tape.backward(loss);
      const AggregatorWeights<T> grads = ad::weight_gradients(tape, vars);

      const double lr = lr_at(iter, total_iters, params.lr, params.final_lr_fraction);
      adamw_step(state, result.weights, grads, lr);
      const double loss_value = static_cast<double>(tape.value(loss)(0, 0));
      result.log.push_back({iter, lr, loss_value});
      epoch_loss += loss_value;
      ++iter;
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(batches.size()));
  }
  return result;
}

void write_loss_log(std::ostream& out, std::span<const LossRecord> log) {
  out << "iter,lr,loss\n";
  char line[96];
  for (const auto& r : log) {
    std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g\n", static_cast<long long>(r.iter), r.lr, r.loss);
    out << line;
  }
}

template void adamw_step(OptimizerState<float>&, std::span<const std::span<float>>,
                         std::span<const std::span<const float>>, double);
template void adamw_step(OptimizerState<double>&, std::span<const std::span<double>>,
                         std::span<const std::span<const double>>, double);
template void adamw_step(OptimizerState<float>&, AggregatorWeights<float>&, const AggregatorWeights<float>&, double);
template void adamw_step(OptimizerState<double>&, AggregatorWeights<double>&, const AggregatorWeights<double>&,
                         double);
template TrainResult<float> train_run(std::span<const LabeledFeatures>, const AggregatorConfig&, const TrainParams&,
                                      int, const AggregatorWeights<float>*);
template TrainResult<double> train_run(std::span<const LabeledFeatures>, const AggregatorConfig&,
                                       const TrainParams&, int, const AggregatorWeights<double>*);

}  // namespace salad
