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
#include <vector>

#include "salad/error.hpp"
#include "salad/retrieval.hpp"

// Naive double-precision reference implementations. They use nested
// std::vector storage and direct formulas so they share no code with the
// Eigen-based main path they are compared against.
namespace salad::oracle {

using DMatrix = std::vector<std::vector<double>>;
using DVector = std::vector<double>;

/// The direct-space computation overflowed or underflowed.
class OracleInapplicable : public NumericError {
 public:
  using NumericError::NumericError;
};

DMatrix transpose(const DMatrix& a);
DMatrix matmul(const DMatrix& a, const DMatrix& b);

/// W2 relu(W1 x + b1) (.* mask) + b2.
DVector mlp2(const DVector& x, const DMatrix& w1, const DVector& b1, const DMatrix& w2, const DVector& b2,
             const DVector* mask = nullptr);

/// K = exp(S), then `iters` passes of column scaling to kappa = [1_m, n-m]
/// followed by row scaling to 1_n. Throws OracleInapplicable when any
/// intermediate is non-finite or a sum vanishes.
DMatrix sinkhorn(const DMatrix& scores, int iters = 10000);

/// Multi-similarity loss evaluated term by term from a similarity matrix.
double ms_loss(const DMatrix& similarity, const std::vector<int>& labels, double alpha, double beta,
               double lambda, double epsilon);

struct RankedId {
  std::string id;
  double similarity;
};

/// Scores every reference, sorts all of them, returns the first k.
std::vector<RankedId> topk_full_sort(const DMatrix& references, const std::vector<std::string>& ids,
                                     const DVector& query, std::size_t k);

struct RecallCase {
  std::string id;
  DVector descriptor;
  GeoTag geotag;
};

/// Recall@k by fully sorting every query's references (self-id removed)
/// and scanning for the first positive. Returns one value per k in `ks`
/// order; `evaluated` receives the number of queries with a positive.
std::vector<double> recall_full_scan(const DMatrix& references, const std::vector<std::string>& ids,
                                     const std::vector<GeoTag>& tags, const std::vector<RecallCase>& queries,
                                     const std::vector<int>& ks, PositiveMode mode, std::size_t* evaluated = nullptr);

}  // namespace salad::oracle
