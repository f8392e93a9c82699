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

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "salad/autodiff.hpp"
#include "salad/error.hpp"
#include "salad/oracle.hpp"
#include "salad/ot_assign.hpp"
#include "support.hpp"

using namespace salad;
using salad::testing::random_matrix;

namespace {

ScoreMatrix<double> random_scores(Index n, Index m, std::mt19937_64& rng, double scale) {
  return {random_matrix(n, m + 1, rng, scale)};
}

}  // namespace

TEST_CASE("build_scores") {
  AggregatorConfig c;
  c.m = 3;
  c.l = 2;
  c.g_dim = 2;
  c.d = 5;
  c.hidden = 4;
  std::mt19937_64 rng(1);
  const FeatureSet f = salad::testing::random_features(6, 5, rng);

  SUBCASE("zero weights give zero scores") {
    AggregatorWeights<double> w = init_weights<double>(c);
    for (auto& v : parameter_views(w)) std::fill(v.values().begin(), v.values().end(), 0.0);
    const auto s = build_scores(f, w, c);
    CHECK(s.values.rows() == 6);
    CHECK(s.values.cols() == 4);
    CHECK(s.values.isZero());
  }

  SUBCASE("rows are the score mlp plus the dustbin column") {
    auto w = salad::testing::random_weights<double>(c, rng);
    const auto s = build_scores(f, w, c);
    for (Index i = 0; i < 6; ++i) {
      const auto expect = oracle::mlp2(salad::testing::to_std<double>(f.tokens.row(i).transpose().cast<double>()),
                                       salad::testing::to_nested(w.score.w1), salad::testing::to_std(w.score.b1),
                                       salad::testing::to_nested(w.score.w2), salad::testing::to_std(w.score.b2));
      for (Index j = 0; j < 3; ++j) CHECK(std::abs(s.values(i, j) - expect[j]) < 1e-12);
      CHECK(s.values(i, 3) == w.z);
    }
  }

  SUBCASE("permuting features permutes rows") {
    auto w = salad::testing::random_weights<double>(c, rng);
    FeatureSet shuffled = f;
    const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
    for (Index i = 0; i < 6; ++i) shuffled.tokens.row(i) = f.tokens.row(perm[i]);
    const auto a = build_scores(f, w, c);
    const auto b = build_scores(shuffled, w, c);
    for (Index i = 0; i < 6; ++i) CHECK(b.values.row(i) == a.values.row(perm[i]));
  }

  SUBCASE("dimension mismatch") {
    AggregatorConfig wrong = c;
    wrong.d = 6;
    CHECK_THROWS_AS(build_scores(f, init_weights<double>(c), wrong), DimensionError);
  }
}

TEST_CASE("sinkhorn_assign") {
  SUBCASE("uniform 2x2 is exactly one half everywhere") {
    for (int iters = 1; iters <= 5; ++iters) {
      const auto a = sinkhorn_assign(ScoreMatrix<double>{Matrix<double>::Zero(2, 2)}, iters);
      CHECK((a.plan.array() - 0.5).abs().maxCoeff() < 1e-15);
    }
  }

  SUBCASE("fixed 4x3 instance matches the direct-space oracle") {
    const Matrix<double> s = (Matrix<double>(4, 3) << 0.3, -1.2, 0.5,  //
                              2.0, 0.1, 0.5,                            //
                              -0.7, 1.4, 0.5,                           //
                              0.9, 0.9, 0.5)
                                 .finished();
    const auto a = sinkhorn_assign(ScoreMatrix<double>{s}, 1000);
    const auto ref = oracle::sinkhorn(salad::testing::to_nested(s), 10000);
    CHECK(salad::testing::max_abs_diff(a.plan, ref) < 1e-8);
    CHECK(a.kappa(2) == 2.0);
  }

  SUBCASE("constant shift leaves the plan unchanged") {
    std::mt19937_64 rng(2);
    const auto s = random_scores(7, 3, rng, 1.5);
    const auto base = sinkhorn_assign(s, 1000);
    const auto shifted = sinkhorn_assign(ScoreMatrix<double>{(s.values.array() + 4.2).matrix()}, 1000);
    CHECK((base.plan - shifted.plan).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("preconditions") {
    CHECK_THROWS_AS(sinkhorn_assign(ScoreMatrix<double>{Matrix<double>::Zero(2, 3)}, 3), PreconditionError);
    CHECK_THROWS_AS(sinkhorn_assign(ScoreMatrix<double>{Matrix<double>::Zero(1, 3)}, 3), PreconditionError);
    CHECK_THROWS_AS(sinkhorn_assign(ScoreMatrix<double>{Matrix<double>::Zero(3, 2)}, 0), PreconditionError);
    Matrix<double> bad = Matrix<double>::Zero(3, 2);
    bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(sinkhorn_assign(ScoreMatrix<double>{bad}, 3), NumericError);
  }

  SUBCASE("rows sum to one after any number of passes") {
    std::mt19937_64 rng(3);
    for (int iters : {1, 2, 3, 10}) {
      const auto a = sinkhorn_assign(random_scores(9, 4, rng, 2.0), iters);
      CHECK(marginal_violation(a).rows_max < 1e-6);
    }
  }

  SUBCASE("float path agrees with double") {
    std::mt19937_64 rng(4);
    const auto s = random_scores(12, 5, rng, 1.0);
    const auto d = sinkhorn_assign(s, 3);
    const auto f = sinkhorn_assign(ScoreMatrix<float>{s.values.cast<float>()}, 3);
    CHECK((f.plan.cast<double>() - d.plan).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("drop_dustbin") {
  std::mt19937_64 rng(5);
  const auto a = sinkhorn_assign(random_scores(10, 4, rng, 2.0), 2000);
  const Matrix<double> p = drop_dustbin(a);
  CHECK(p.rows() == 10);
  CHECK(p.cols() == 4);
  CHECK(p == a.plan.leftCols(4));
  CHECK(a.plan.cols() == 5);
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(p.col(j).sum() - 1.0) < 1e-6);
  for (Index i = 0; i < 10; ++i) CHECK(p.row(i).sum() <= 1.0 + 1e-6);
}

TEST_CASE("sinkhorn properties over 50 random instances") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<Index> pick_m(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = pick_m(rng);
    const Index n = m + 1 + pick_m(rng) * 2;
    const auto s = random_scores(n, m, rng, 2.0);

    const auto converged = sinkhorn_assign(s, 1000);
    const auto v = marginal_violation(converged);
    CHECK(v.rows_max < 1e-6);
    CHECK(v.cols_max < 1e-6);
    CHECK((converged.plan.array() > 0.0).all());

    // Row permutation: same iteration count, plan rows permuted. Column
    // sums change summation order, so equality is up to rounding.
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ScoreMatrix<double> permuted{Matrix<double>(n, m + 1)};
    for (Index i = 0; i < n; ++i) permuted.values.row(i) = s.values.row(perm[i]);
    const auto a = sinkhorn_assign(s, 3);
    const auto b = sinkhorn_assign(permuted, 3);
    for (Index i = 0; i < n; ++i) CHECK((b.plan.row(i) - a.plan.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);

    // L1 column violation never grows from one full pass to the next.
    double previous = std::numeric_limits<double>::infinity();
    for (int iters = 1; iters <= 30; ++iters) {
      const double now = marginal_violation(sinkhorn_assign(s, iters)).cols_l1;
      CHECK(now <= previous * (1.0 + 1e-12) + 1e-14);
      previous = now;
    }
  }
}

TEST_CASE("unrolled gradient w.r.t. scores and z at iters=3") {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 1 + trial % 4;
    const Index n = m + 2 + trial % 3;
    const Matrix<double> s = random_matrix(n, m, rng, 1.5);
    const Matrix<double> z = random_matrix(1, 1, rng);
    worst = std::max(worst, salad::testing::op_gradient_error(
                                [](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
                                  return ad::sinkhorn(t, ad::append_constant_column(t, v[0], v[1]), 3);
                                },
                                {s, z}, rng));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("extreme scores: oracle overflows, log domain stays finite") {
  Matrix<double> s = Matrix<double>::Zero(5, 3);
  s(0, 0) = 750.0;
  CHECK_THROWS_AS(oracle::sinkhorn(salad::testing::to_nested(s), 100), oracle::OracleInapplicable);
  const auto a = sinkhorn_assign(ScoreMatrix<double>{s}, 100);
  CHECK(a.plan.allFinite());
  CHECK(marginal_violation(a).rows_max < 1e-6);

  // exp(700) itself is representable in binary64; the log-domain result is
  // finite and feasible regardless.
  s(0, 0) = 700.0;
  const auto b = sinkhorn_assign(ScoreMatrix<double>{s}, 100);
  CHECK(b.plan.allFinite());
  const auto bf = sinkhorn_assign(ScoreMatrix<float>{s.cast<float>()}, 100);
  CHECK(bf.plan.allFinite());
}
