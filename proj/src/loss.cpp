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

#include "salad/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "salad/error.hpp"

namespace salad {

void LossParams::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("loss: alpha must be > 0");
  if (!(beta > 0.0)) throw ConfigError("loss: beta must be > 0");
  if (!(epsilon >= 0.0)) throw ConfigError("loss: epsilon must be >= 0");
  if (!std::isfinite(lambda)) throw ConfigError("loss: lambda must be finite");
}

namespace {

// log(1 + sum_k e^{x_k}) and, optionally, d/dx_k = softmax weights of the
// x_k against an implicit 0 logit.
double log1p_sum_exp(const std::vector<double>& x, std::vector<double>* weights) {
  double mx = 0.0;
  for (double v : x) mx = std::max(mx, v);
  double total = std::exp(-mx);
  for (double v : x) total += std::exp(v - mx);
  if (weights != nullptr) {
    weights->resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) (*weights)[k] = std::exp(x[k] - mx) / total;
  }
  return mx + std::log(total);
}

}  // namespace

template <typename T>
T ms_loss_from_similarity(const Matrix<T>& similarity, std::span<const int> labels, const LossParams& params,
                          Matrix<T>* grad) {
  params.validate();
  const Index batch = similarity.rows();
  if (similarity.cols() != batch || static_cast<std::size_t>(batch) != labels.size()) {
    throw DimensionError("ms_loss: similarity is " + std::to_string(similarity.rows()) + "x" +
                         std::to_string(similarity.cols()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw UsageError("ms_loss: need at least two distinct labels");
  }
  if (grad != nullptr) grad->setZero(batch, batch);

  const double alpha = params.alpha;
  const double beta = params.beta;
  const double lambda = params.lambda;
  const double eps = params.epsilon;

  double total = 0.0;
  Index anchors = 0;
  std::vector<Index> pos_idx, neg_idx;
  std::vector<double> pos_logits, neg_logits, pos_w, neg_w;
  // Per-anchor gradients are scaled by 1/anchors once the count is known.
  std::vector<std::pair<Index, std::vector<std::pair<Index, double>>>> pending;

  for (Index i = 0; i < batch; ++i) {
    double max_neg = -std::numeric_limits<double>::infinity();
    double min_pos = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < batch; ++j) {
      if (j == i) continue;
      const double s = static_cast<double>(similarity(i, j));
      if (labels[j] == labels[i]) {
        min_pos = std::min(min_pos, s);
      } else {
        max_neg = std::max(max_neg, s);
      }
    }
    if (!std::isfinite(min_pos) || !std::isfinite(max_neg)) continue;

    pos_idx.clear();
    neg_idx.clear();
    pos_logits.clear();
    neg_logits.clear();
    for (Index j = 0; j < batch; ++j) {
      if (j == i) continue;
      const double s = static_cast<double>(similarity(i, j));
      if (labels[j] == labels[i]) {
        if (s < max_neg + eps) {
          pos_idx.push_back(j);
          pos_logits.push_back(-alpha * (s - lambda));
        }
      } else if (s > min_pos - eps) {
        neg_idx.push_back(j);
        neg_logits.push_back(beta * (s - lambda));
      }
    }
    if (pos_idx.empty() && neg_idx.empty()) continue;

    ++anchors;
    const bool want = grad != nullptr;
    total += log1p_sum_exp(pos_logits, want ? &pos_w : nullptr) / alpha;
    total += log1p_sum_exp(neg_logits, want ? &neg_w : nullptr) / beta;
    if (want) {
      std::vector<std::pair<Index, double>> row;
      // d/dS of (1/alpha) log(1 + sum e^{-alpha(S - lambda)}) = -w.
      for (std::size_t k = 0; k < pos_idx.size(); ++k) row.emplace_back(pos_idx[k], -pos_w[k]);
      for (std::size_t k = 0; k < neg_idx.size(); ++k) row.emplace_back(neg_idx[k], neg_w[k]);
      pending.emplace_back(i, std::move(row));
    }
  }
  if (anchors == 0) return T(0);
  const double scale = 1.0 / static_cast<double>(anchors);
  if (grad != nullptr) {
    for (const auto& [i, row] : pending) {
      for (const auto& [j, g] : row) (*grad)(i, j) += static_cast<T>(g * scale);
    }
  }
  return static_cast<T>(total * scale);
}

template <typename T>
T ms_loss(std::span<const BasicDescriptor<T>> descriptors, std::span<const int> labels,
          const LossParams& params) {
  if (descriptors.size() != labels.size()) throw DimensionError("ms_loss: descriptors/labels length mismatch");
  if (descriptors.empty()) throw UsageError("ms_loss: empty batch");
  const Index dim = descriptors.front().values.size();
  Matrix<T> stacked(static_cast<Index>(descriptors.size()), dim);
  for (std::size_t b = 0; b < descriptors.size(); ++b) {
    if (descriptors[b].values.size() != dim) throw DimensionError("ms_loss: descriptor dims differ");
    stacked.row(static_cast<Index>(b)) = descriptors[b].values.transpose();
  }
  const Matrix<T> similarity = stacked * stacked.transpose();
  return ms_loss_from_similarity(similarity, labels, params);
}

template float ms_loss(std::span<const BasicDescriptor<float>>, std::span<const int>, const LossParams&);
template double ms_loss(std::span<const BasicDescriptor<double>>, std::span<const int>, const LossParams&);
template float ms_loss_from_similarity(const Matrix<float>&, std::span<const int>, const LossParams&,
                                       Matrix<float>*);
template double ms_loss_from_similarity(const Matrix<double>&, std::span<const int>, const LossParams&,
                                        Matrix<double>*);

}  // namespace salad
