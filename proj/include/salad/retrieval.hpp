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

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "salad/aggregation.hpp"
#include "salad/features.hpp"
#include "salad/tensor.hpp"

namespace salad {

inline constexpr double kPositiveRadiusMeters = 25.0;
inline constexpr std::int64_t kPositiveFrameWindow = 2;

enum class PositiveMode { planar, frame };

/// A reference is a positive for a query if it lies strictly closer than
/// 25 m (planar) or within two frames (frame). Tags of the wrong kind for
/// `mode` -> UsageError.
bool is_positive(const GeoTag& query, const GeoTag& reference, PositiveMode mode);

struct Match {
  std::string id;
  double similarity = 0.0;
  Index index = 0;  // row in the index
};

/// Exhaustive inner-product index over unit-norm descriptors.
class RetrievalIndex {
 public:
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::optional<GeoTag>>& geotags() const { return geotags_; }
  const Matrix<float>& descriptors() const { return descriptors_; }
  Index size() const { return descriptors_.rows(); }
  Index dim() const { return descriptors_.cols(); }

  /// Inner product of every stored descriptor with `query`, accumulated in
  /// double precision.
  std::vector<double> similarities(const Vector<float>& query) const;

 private:
  friend RetrievalIndex build_index(std::span<const Descriptor>, std::span<const std::optional<GeoTag>>);

  Matrix<float> descriptors_;
  std::vector<std::string> ids_;
  std::vector<std::optional<GeoTag>> geotags_;
};

/// ValidationError for empty input, mismatched lengths or dims, duplicate
/// ids, or a descriptor whose norm is off by more than 1e-4. `geotags` may
/// be empty (no tags) or parallel to `descriptors`.
RetrievalIndex build_index(std::span<const Descriptor> descriptors,
                           std::span<const std::optional<GeoTag>> geotags = {});

/// min(k, N) best matches by descending similarity, ties by ascending id.
std::vector<Match> query_topk(const RetrievalIndex& index, const Vector<float>& query, Index k);
std::vector<Match> query_topk(const RetrievalIndex& index, const Descriptor& query, Index k);

struct EvalQuery {
  Descriptor descriptor;
  GeoTag geotag;
};

struct EvalReport {
  std::vector<std::pair<int, double>> recall;  // ascending k
  Index evaluated = 0;
  Index excluded = 0;  // queries with no positive in the index

  /// Recall for `k`; ValidationError if it was not evaluated.
  double at(int k) const;
};

/// Fraction of queries with a positive among their top-k references.
/// References sharing the query's id are ignored; queries without any
/// positive reference are excluded from the denominator.
EvalReport recall_at_k(const RetrievalIndex& index, std::span<const EvalQuery> queries, std::span<const int> ks,
                       PositiveMode mode);

/// One "R@{k}: {value}" line per k, value with four decimals.
std::string format_report(const EvalReport& report);

}  // namespace salad
