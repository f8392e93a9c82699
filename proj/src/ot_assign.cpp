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

#include "salad/ot_assign.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "salad/error.hpp"

namespace salad {

template <typename T>
ScoreMatrix<T> build_scores(const Matrix<T>& tokens, const AggregatorWeights<T>& weights,
                            const Matrix<T>* score_mask) {
  const Matrix<T> s = mlp2_forward_rows(tokens, weights.score, score_mask);
  ScoreMatrix<T> out{Matrix<T>(s.rows(), s.cols() + 1)};
  out.values.leftCols(s.cols()) = s;
  out.values.col(s.cols()).setConstant(weights.z);
  return out;
}

template <typename T>
ScoreMatrix<T> build_scores(const FeatureSet& features, const AggregatorWeights<T>& weights,
                            const AggregatorConfig& config, const Matrix<T>* score_mask) {
  if (features.dim() != config.d) {
    throw DimensionError("build_scores: token dim " + std::to_string(features.dim()) + " != d " +
                         std::to_string(config.d));
  }
  return build_scores(Matrix<T>(features.tokens.template cast<T>()), weights, score_mask);
}

namespace detail {

template <typename T>
SinkhornTrace<T> sinkhorn_log(const Matrix<T>& scores, int iters, bool keep_history) {
  const Index n = scores.rows();
  const Index cols = scores.cols();
  const Index m = cols - 1;
  if (m < 1 || n <= m) {
    throw PreconditionError("sinkhorn: need n > m >= 1, got n=" + std::to_string(n) +
                            " m=" + std::to_string(m));
  }
  if (iters < 1) throw PreconditionError("sinkhorn: iters must be >= 1");
  if (!scores.allFinite()) throw NumericError("sinkhorn: non-finite score");

  SinkhornTrace<T> trace;
  trace.log_kappa = Vector<T>::Zero(cols);
  trace.log_kappa(m) = static_cast<T>(std::log(static_cast<double>(n - m)));

  Vector<T> u = Vector<T>::Zero(n);
  Vector<T> v(cols);
  Vector<T> col_max(cols);
  Vector<T> col_sum(cols);
  if (keep_history) {
    trace.row.reserve(iters);
    trace.col.reserve(iters);
  }

  for (int t = 0; t < iters; ++t) {
    if (keep_history) trace.row.push_back(u);

    // Columns: v_j = log kappa_j - LSE_i(S_ij + u_i).
    col_max.setConstant(-std::numeric_limits<T>::infinity());
    for (Index i = 0; i < n; ++i) {
      col_max = col_max.cwiseMax((scores.row(i).transpose().array() + u(i)).matrix());
    }
    col_sum.setZero();
    for (Index i = 0; i < n; ++i) {
      col_sum.array() += (scores.row(i).transpose().array() + u(i) - col_max.array()).exp();
    }
    v = trace.log_kappa.array() - (col_max.array() + col_sum.array().log());
    if (keep_history) trace.col.push_back(v);

    // Rows: u_i = log mu_i - LSE_j(S_ij + v_j), log mu_i = 0.
    for (Index i = 0; i < n; ++i) {
      const auto shifted = scores.row(i).transpose().array() + v.array();
      const T mx = shifted.maxCoeff();
      u(i) = -(mx + std::log((shifted - mx).exp().sum()));
    }
  }
  if (!keep_history) {
    trace.col.push_back(v);
  }
  trace.final_row = u;
  return trace;
}

template <typename T>
Matrix<T> plan_from_potentials(const Matrix<T>& scores, const Vector<T>& row, const Vector<T>& col) {
  Matrix<T> plan = scores;
  plan.colwise() += row;
  plan.rowwise() += col.transpose();
  return plan.array().exp().matrix();
}

template <typename T>
Matrix<T> sinkhorn_backward(const Matrix<T>& scores, const SinkhornTrace<T>& trace, const Matrix<T>& plan,
                            const Matrix<T>& grad_plan) {
  const int iters = static_cast<int>(trace.row.size());
  if (iters < 1 || trace.col.size() != trace.row.size()) {
    throw UsageError("sinkhorn_backward: trace was recorded without history");
  }
  const Matrix<T> grad_log = grad_plan.cwiseProduct(plan);
  Matrix<T> grad_scores = grad_log;
  Vector<T> grad_u = grad_log.rowwise().sum();
  Vector<T> grad_v = grad_log.colwise().sum().transpose();

  for (int t = iters - 1; t >= 0; --t) {
    const Vector<T>& v = trace.col[t];
    const Vector<T>& u_next = (t + 1 < iters) ? trace.row[t + 1] : trace.final_row;
    const Vector<T>& u_prev = trace.row[t];

    // Row update: u_next_i = -LSE_j(S_ij + v_j); its softmax is the plan
    // right after this row pass.
    const Matrix<T> row_soft = plan_from_potentials(scores, u_next, v);
    const Matrix<T> weighted_rows = row_soft.array().colwise() * grad_u.array();
    grad_scores -= weighted_rows;
    grad_v -= weighted_rows.colwise().sum().transpose();

    // Column update: v_j = log kappa_j - LSE_i(S_ij + u_prev_i).
    const Vector<T> col_shift = v - trace.log_kappa;
    const Matrix<T> col_soft = plan_from_potentials(scores, u_prev, col_shift);
    const Matrix<T> weighted_cols = col_soft.array().rowwise() * grad_v.transpose().array();
    grad_scores -= weighted_cols;
    grad_u = -weighted_cols.rowwise().sum();
    grad_v.setZero();
  }
  return grad_scores;
}

}  // namespace detail

template <typename T>
Assignment<T> sinkhorn_assign(const ScoreMatrix<T>& scores, int iters) {
  const auto trace = detail::sinkhorn_log(scores.values, iters, false);
  Assignment<T> out;
  out.plan = detail::plan_from_potentials(scores.values, trace.final_row, trace.col.back());
  out.mu = Vector<T>::Ones(scores.features());
  out.kappa = Vector<T>::Ones(scores.values.cols());
  out.kappa(scores.clusters()) = static_cast<T>(scores.features() - scores.clusters());
  return out;
}

template <typename T>
Matrix<T> drop_dustbin(const Assignment<T>& assignment) {
  return assignment.plan.leftCols(assignment.clusters());
}

template <typename T>
MarginalViolation marginal_violation(const Assignment<T>& assignment) {
  const Vector<double> row_err =
      (assignment.plan.rowwise().sum() - assignment.mu).template cast<double>().cwiseAbs();
  const Vector<double> col_err =
      (assignment.plan.colwise().sum().transpose() - assignment.kappa).template cast<double>().cwiseAbs();
  return {row_err.maxCoeff(), col_err.maxCoeff(), col_err.sum()};
}

#define SALAD_INSTANTIATE(T)                                                                            \
  template ScoreMatrix<T> build_scores(const Matrix<T>&, const AggregatorWeights<T>&, const Matrix<T>*); \
  template ScoreMatrix<T> build_scores(const FeatureSet&, const AggregatorWeights<T>&,                  \
                                       const AggregatorConfig&, const Matrix<T>*);                      \
  template Assignment<T> sinkhorn_assign(const ScoreMatrix<T>&, int);                                   \
  template Matrix<T> drop_dustbin(const Assignment<T>&);                                                \
  template MarginalViolation marginal_violation(const Assignment<T>&);                                  \
  template detail::SinkhornTrace<T> detail::sinkhorn_log(const Matrix<T>&, int, bool);                  \
  template Matrix<T> detail::plan_from_potentials(const Matrix<T>&, const Vector<T>&, const Vector<T>&); \
  template Matrix<T> detail::sinkhorn_backward(const Matrix<T>&, const detail::SinkhornTrace<T>&,       \
                                               const Matrix<T>&, const Matrix<T>&);

SALAD_INSTANTIATE(float)
SALAD_INSTANTIATE(double)

#undef SALAD_INSTANTIATE

}  // namespace salad
