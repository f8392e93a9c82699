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

#include "salad/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "salad/error.hpp"

namespace salad {

bool is_positive(const GeoTag& query, const GeoTag& reference, PositiveMode mode) {
  if (mode == PositiveMode::planar) {
    const auto* q = std::get_if<PlanarPosition>(&query);
    const auto* r = std::get_if<PlanarPosition>(&reference);
    if (q == nullptr || r == nullptr) throw UsageError("is_positive: planar mode needs planar geotags");
    return std::hypot(q->x - r->x, q->y - r->y) < kPositiveRadiusMeters;
  }
  const auto* q = std::get_if<FrameIndex>(&query);
  const auto* r = std::get_if<FrameIndex>(&reference);
  if (q == nullptr || r == nullptr) throw UsageError("is_positive: frame mode needs frame geotags");
  const std::int64_t gap = q->frame > r->frame ? q->frame - r->frame : r->frame - q->frame;
  return gap <= kPositiveFrameWindow;
}

std::vector<double> RetrievalIndex::similarities(const Vector<float>& query) const {
  if (query.size() != dim()) {
    throw DimensionError("query: descriptor dim " + std::to_string(query.size()) + " != index dim " +
                         std::to_string(dim()));
  }
  const Vector<double> q = query.cast<double>();
  std::vector<double> sims(static_cast<std::size_t>(size()));
  for (Index r = 0; r < size(); ++r) {
    sims[static_cast<std::size_t>(r)] = descriptors_.row(r).cast<double>().dot(q.transpose());
  }
  return sims;
}

RetrievalIndex build_index(std::span<const Descriptor> descriptors, std::span<const std::optional<GeoTag>> geotags) {
  if (descriptors.empty()) throw ValidationError("build_index: no descriptors");
  if (!geotags.empty() && geotags.size() != descriptors.size()) {
    throw ValidationError("build_index: " + std::to_string(geotags.size()) + " geotags for " +
                          std::to_string(descriptors.size()) + " descriptors");
  }
  const Index dim = descriptors.front().values.size();
  RetrievalIndex index;
  index.descriptors_.resize(static_cast<Index>(descriptors.size()), dim);
  std::unordered_set<std::string> seen;
  for (std::size_t k = 0; k < descriptors.size(); ++k) {
    const Descriptor& d = descriptors[k];
    if (d.values.size() != dim) throw ValidationError("build_index: descriptor '" + d.id + "' has wrong dim");
    if (!seen.insert(d.id).second) throw ValidationError("build_index: duplicate id '" + d.id + "'");
    const double norm = d.values.cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= 1e-4)) {
      throw ValidationError("build_index: descriptor '" + d.id + "' has norm " + std::to_string(norm));
    }
    index.descriptors_.row(static_cast<Index>(k)) = d.values.transpose();
    index.ids_.push_back(d.id);
  }
  if (geotags.empty()) {
    index.geotags_.assign(descriptors.size(), std::nullopt);
  } else {
    index.geotags_.assign(geotags.begin(), geotags.end());
  }
  return index;
}

namespace {

struct Ranked {
  double similarity;
  const std::string* id;
  Index index;
};

bool ranks_before(const Ranked& a, const Ranked& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return *a.id < *b.id;
}

}  // namespace

std::vector<Match> query_topk(const RetrievalIndex& index, const Vector<float>& query, Index k) {
  if (k < 1) throw ValidationError("query_topk: k must be >= 1");
  const std::vector<double> sims = index.similarities(query);
  std::vector<Ranked> ranked;
  ranked.reserve(sims.size());
  for (Index r = 0; r < index.size(); ++r) {
    ranked.push_back({sims[static_cast<std::size_t>(r)], &index.ids()[static_cast<std::size_t>(r)], r});
  }
  const auto take = static_cast<std::size_t>(std::min<Index>(k, index.size()));
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), ranks_before);
  std::vector<Match> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) out.push_back({*ranked[r].id, ranked[r].similarity, ranked[r].index});
  return out;
}

std::vector<Match> query_topk(const RetrievalIndex& index, const Descriptor& query, Index k) {
  return query_topk(index, query.values, k);
}

double EvalReport::at(int k) const {
  for (const auto& [kk, value] : recall) {
    if (kk == k) return value;
  }
  throw ValidationError("EvalReport: R@" + std::to_string(k) + " was not evaluated");
}

EvalReport recall_at_k(const RetrievalIndex& index, std::span<const EvalQuery> queries, std::span<const int> ks,
                       PositiveMode mode) {
  if (queries.empty()) throw ValidationError("recall_at_k: no queries");
  if (ks.empty()) throw ValidationError("recall_at_k: no k values");
  const std::set<int> sorted_ks(ks.begin(), ks.end());
  if (*sorted_ks.begin() < 1) throw ValidationError("recall_at_k: k must be >= 1");
  for (std::size_t r = 0; r < index.geotags().size(); ++r) {
    if (!index.geotags()[r]) throw ValidationError("recall_at_k: reference '" + index.ids()[r] + "' has no geotag");
  }

  std::vector<Index> hits(sorted_ks.size(), 0);
  EvalReport report;
  for (const EvalQuery& query : queries) {
    const std::vector<double> sims = index.similarities(query.descriptor.values);
    // Rank of the best-ranked positive = 1 + candidates ranked ahead of it.
    std::optional<Ranked> best;
    for (Index r = 0; r < index.size(); ++r) {
      const auto ri = static_cast<std::size_t>(r);
      if (index.ids()[ri] == query.descriptor.id) continue;
      if (!is_positive(query.geotag, *index.geotags()[ri], mode)) continue;
      const Ranked candidate{sims[ri], &index.ids()[ri], r};
      if (!best || ranks_before(candidate, *best)) best = candidate;
    }
    if (!best) {
      ++report.excluded;
      continue;
    }
    ++report.evaluated;
    Index rank = 1;
    for (Index r = 0; r < index.size(); ++r) {
      const auto ri = static_cast<std::size_t>(r);
      if (index.ids()[ri] == query.descriptor.id) continue;
      if (ranks_before({sims[ri], &index.ids()[ri], r}, *best)) ++rank;
    }
    std::size_t slot = 0;
    for (int k : sorted_ks) {
      if (rank <= k) ++hits[slot];
      ++slot;
    }
  }
  std::size_t slot = 0;
  for (int k : sorted_ks) {
    const double value =
        report.evaluated > 0 ? static_cast<double>(hits[slot]) / static_cast<double>(report.evaluated) : 0.0;
    report.recall.emplace_back(k, value);
    ++slot;
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::string out;
  char line[64];
  for (const auto& [k, value] : report.recall) {
    std::snprintf(line, sizeof(line), "R@%d: %.4f\n", k, value);
    out += line;
  }
  return out;
}

}  // namespace salad
