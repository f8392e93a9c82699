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

#include <vector>

#include "salad/features.hpp"
#include "salad/model.hpp"
#include "salad/tensor.hpp"

namespace salad {

/// Feature-to-cluster scores augmented with the dustbin column: n x (m+1),
/// every entry of the last column equal to z.
template <typename T>
struct ScoreMatrix {
  Matrix<T> values;

  Index features() const { return values.rows(); }
  Index clusters() const { return values.cols() - 1; }
};

/// Transport plan between feature mass mu = 1_n and cluster capacities
/// kappa = [1_m, n - m].
template <typename T>
struct Assignment {
  Matrix<T> plan;  // n x (m+1)
  Vector<T> mu;
  Vector<T> kappa;

  Index features() const { return plan.rows(); }
  Index clusters() const { return plan.cols() - 1; }
};

struct MarginalViolation {
  double rows_max = 0.0;  // ||P 1 - mu||_inf
  double cols_max = 0.0;  // ||P^T 1 - kappa||_inf
  double cols_l1 = 0.0;   // ||P^T 1 - kappa||_1, non-increasing across passes
};

template <typename T>
ScoreMatrix<T> build_scores(const Matrix<T>& tokens, const AggregatorWeights<T>& weights,
                            const Matrix<T>* score_mask = nullptr);

/// `score_mask` is the (n x hidden) dropout mask of the score MLP in
/// training mode; inference passes none.
template <typename T>
ScoreMatrix<T> build_scores(const FeatureSet& features, const AggregatorWeights<T>& weights,
                            const AggregatorConfig& config, const Matrix<T>* score_mask = nullptr);

/// Log-domain Sinkhorn from exp(S_bar): each pass rescales columns to kappa,
/// then rows to mu, so rows match mu after the last pass.
///
/// Requires n > m and iters >= 1 (PreconditionError) and finite scores
/// (NumericError).
template <typename T>
Assignment<T> sinkhorn_assign(const ScoreMatrix<T>& scores, int iters);

/// First m columns of the plan.
template <typename T>
Matrix<T> drop_dustbin(const Assignment<T>& assignment);

template <typename T>
MarginalViolation marginal_violation(const Assignment<T>& assignment);

namespace detail {

/// Dual potentials recorded for each pass. For pass t, `row[t]` is the row
/// potential entering the column update and `col[t]` the column potential
/// it produced; `final_row` closes the last pass. log P = S + u_i + v_j.
template <typename T>
struct SinkhornTrace {
  std::vector<Vector<T>> row;
  std::vector<Vector<T>> col;
  Vector<T> final_row;
  Vector<T> log_kappa;
};

template <typename T>
SinkhornTrace<T> sinkhorn_log(const Matrix<T>& scores, int iters, bool keep_history);

template <typename T>
Matrix<T> plan_from_potentials(const Matrix<T>& scores, const Vector<T>& row, const Vector<T>& col);

/// Gradient of the plan w.r.t. the scores, unrolling every recorded pass.
template <typename T>
Matrix<T> sinkhorn_backward(const Matrix<T>& scores, const SinkhornTrace<T>& trace, const Matrix<T>& plan,
                            const Matrix<T>& grad_plan);

}  // namespace detail

}  // namespace salad
