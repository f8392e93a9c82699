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

#include "salad/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace salad::oracle {

DMatrix transpose(const DMatrix& a) {
  if (a.empty()) return {};
  DMatrix t(a[0].size(), DVector(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
  }
  return t;
}

DMatrix matmul(const DMatrix& a, const DMatrix& b) {
  const std::size_t rows = a.size();
  const std::size_t inner = b.size();
  const std::size_t cols = inner == 0 ? 0 : b[0].size();
  DMatrix c(rows, DVector(cols, 0.0));
  for (std::size_t i = 0; i < rows; ++i) {
    if (a[i].size() != inner) throw DimensionError("oracle::matmul: inner dims differ");
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += a[i][k] * b[k][j];
      c[i][j] = acc;
    }
  }
  return c;
}

DVector mlp2(const DVector& x, const DMatrix& w1, const DVector& b1, const DMatrix& w2, const DVector& b2,
             const DVector* mask) {
  DVector h(w1.size());
  for (std::size_t r = 0; r < w1.size(); ++r) {
    double acc = b1[r];
    for (std::size_t c = 0; c < x.size(); ++c) acc += w1[r][c] * x[c];
    h[r] = acc > 0.0 ? acc : 0.0;
    if (mask != nullptr) h[r] *= (*mask)[r];
  }
  DVector y(w2.size());
  for (std::size_t r = 0; r < w2.size(); ++r) {
    double acc = b2[r];
    for (std::size_t c = 0; c < h.size(); ++c) acc += w2[r][c] * h[c];
    y[r] = acc;
  }
  return y;
}

DMatrix sinkhorn(const DMatrix& scores, int iters) {
  const std::size_t n = scores.size();
  const std::size_t cols = n == 0 ? 0 : scores[0].size();
  if (cols < 2 || n <= cols - 1) throw PreconditionError("oracle::sinkhorn: need n > m >= 1");
  const std::size_t m = cols - 1;

  DVector kappa(cols, 1.0);
  kappa[m] = static_cast<double>(n - m);

  DMatrix p(n, DVector(cols));
  auto check = [](double v) {
    if (!std::isfinite(v)) throw OracleInapplicable("oracle::sinkhorn: non-finite intermediate");
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      p[i][j] = std::exp(scores[i][j]);
      check(p[i][j]);
    }
  }
  for (int t = 0; t < iters; ++t) {
    for (std::size_t j = 0; j < cols; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += p[i][j];
      if (!(sum > 0.0) || !std::isfinite(sum)) throw OracleInapplicable("oracle::sinkhorn: column sum degenerate");
      const double scale = kappa[j] / sum;
      for (std::size_t i = 0; i < n; ++i) p[i][j] *= scale;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) sum += p[i][j];
      if (!(sum > 0.0) || !std::isfinite(sum)) throw OracleInapplicable("oracle::sinkhorn: row sum degenerate");
      for (std::size_t j = 0; j < cols; ++j) p[i][j] /= sum;
    }
  }
  for (const auto& row : p) {
    for (double v : row) check(v);
  }
  return p;
}

double ms_loss(const DMatrix& similarity, const std::vector<int>& labels, double alpha, double beta,
               double lambda, double epsilon) {
  const std::size_t b = labels.size();
  double sum = 0.0;
  int anchors = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double max_neg = -std::numeric_limits<double>::infinity();
    double min_pos = std::numeric_limits<double>::infinity();
    bool has_pos = false;
    bool has_neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        has_pos = true;
        min_pos = std::min(min_pos, similarity[i][j]);
      } else {
        has_neg = true;
        max_neg = std::max(max_neg, similarity[i][j]);
      }
    }
    if (!has_pos || !has_neg) continue;
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    int mined = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double s = similarity[i][j];
      if (labels[j] == labels[i] && s < max_neg + epsilon) {
        pos_sum += std::exp(-alpha * (s - lambda));
        ++mined;
      }
      if (labels[j] != labels[i] && s > min_pos - epsilon) {
        neg_sum += std::exp(beta * (s - lambda));
        ++mined;
      }
    }
    if (mined == 0) continue;
    sum += std::log(1.0 + pos_sum) / alpha + std::log(1.0 + neg_sum) / beta;
    ++anchors;
  }
  return anchors == 0 ? 0.0 : sum / anchors;
}

namespace {

double dot(const DVector& a, const DVector& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

bool positive(const GeoTag& q, const GeoTag& r, PositiveMode mode) {
  if (mode == PositiveMode::planar) {
    const auto& a = std::get<PlanarPosition>(q);
    const auto& b = std::get<PlanarPosition>(r);
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy) < 25.0;
  }
  const auto fa = std::get<FrameIndex>(q).frame;
  const auto fb = std::get<FrameIndex>(r).frame;
  return std::llabs(fa - fb) <= 2;
}

}  // namespace

std::vector<RankedId> topk_full_sort(const DMatrix& references, const std::vector<std::string>& ids,
                                     const DVector& query, std::size_t k) {
  std::vector<RankedId> all;
  for (std::size_t r = 0; r < references.size(); ++r) all.push_back({ids[r], dot(references[r], query)});
  std::sort(all.begin(), all.end(), [](const RankedId& a, const RankedId& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<double> recall_full_scan(const DMatrix& references, const std::vector<std::string>& ids,
                                     const std::vector<GeoTag>& tags, const std::vector<RecallCase>& queries,
                                     const std::vector<int>& ks, PositiveMode mode, std::size_t* evaluated) {
  std::vector<std::size_t> hits(ks.size(), 0);
  std::size_t counted = 0;
  for (const auto& q : queries) {
    DMatrix refs;
    std::vector<std::string> kept_ids;
    std::vector<GeoTag> kept_tags;
    for (std::size_t r = 0; r < references.size(); ++r) {
      if (ids[r] == q.id) continue;
      refs.push_back(references[r]);
      kept_ids.push_back(ids[r]);
      kept_tags.push_back(tags[r]);
    }
    const auto ranking = topk_full_sort(refs, kept_ids, q.descriptor, refs.size());
    std::size_t first = 0;
    for (std::size_t pos = 0; pos < ranking.size() && first == 0; ++pos) {
      for (std::size_t r = 0; r < kept_ids.size(); ++r) {
        if (kept_ids[r] == ranking[pos].id && positive(q.geotag, kept_tags[r], mode)) {
          first = pos + 1;
          break;
        }
      }
    }
    if (first == 0) continue;
    ++counted;
    for (std::size_t s = 0; s < ks.size(); ++s) {
      if (first <= static_cast<std::size_t>(ks[s])) ++hits[s];
    }
  }
  if (evaluated != nullptr) *evaluated = counted;
  std::vector<double> out;
  for (std::size_t s = 0; s < ks.size(); ++s) {
    out.push_back(counted == 0 ? 0.0 : static_cast<double>(hits[s]) / static_cast<double>(counted));
  }
  return out;
}

}  // namespace salad::oracle
