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

#include <cmath>

#include "salad/autodiff.hpp"
#include "salad/error.hpp"
#include "salad/model.hpp"
#include "salad/oracle.hpp"
#include "support.hpp"

using namespace salad;
using salad::testing::random_matrix;

namespace {

AggregatorConfig tiny_config() {
  AggregatorConfig c;
  c.m = 3;
  c.l = 2;
  c.g_dim = 2;
  c.d = 4;
  c.hidden = 5;
  c.seed = 11;
  return c;
}

Mlp2Weights<double> identity_mlp(Index dim) {
  return {Matrix<double>::Identity(dim, dim), Vector<double>::Zero(dim), Matrix<double>::Identity(dim, dim),
          Vector<double>::Zero(dim)};
}

}  // namespace

TEST_CASE("config defaults and validation") {
  AggregatorConfig c;
  CHECK(c.m == 64);
  CHECK(c.l == 128);
  CHECK(c.g_dim == 256);
  CHECK(c.d == 768);
  CHECK(c.hidden == 512);
  CHECK(c.dropout_rate == doctest::Approx(0.3));
  CHECK(c.descriptor_dim() == 8448);
  CHECK_NOTHROW(c.validate());

  auto rejects = [](auto mutate) {
    AggregatorConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  };
  rejects([](AggregatorConfig& b) { b.m = 0; });
  rejects([](AggregatorConfig& b) { b.l = 0; });
  rejects([](AggregatorConfig& b) { b.g_dim = -1; });
  rejects([](AggregatorConfig& b) { b.hidden = 0; });
  rejects([](AggregatorConfig& b) { b.dropout_rate = 1.0f; });
  rejects([](AggregatorConfig& b) { b.dropout_rate = -0.1f; });
  rejects([](AggregatorConfig& b) { b.sinkhorn_iters = 0; });

  AggregatorConfig no_global;
  no_global.g_dim = 0;
  CHECK_NOTHROW(no_global.validate());
}

TEST_CASE("init_weights") {
  SUBCASE("bound is sqrt(1/fan_in)") {
    CHECK(init_bound(1) == 1.0);
    CHECK(init_bound(4) == 0.5);
    CHECK_THROWS_AS(init_bound(0), ConfigError);
  }

  SUBCASE("deterministic, bounded, zero biases") {
    const AggregatorConfig c = tiny_config();
    const auto a = init_weights<float>(c);
    const auto b = init_weights<float>(c);
    const auto va = parameter_views(a);
    const auto vb = parameter_views(b);
    REQUIRE(va.size() == 13);
    for (std::size_t k = 0; k < va.size(); ++k) {
      CHECK(std::equal(va[k].values().begin(), va[k].values().end(), vb[k].values().begin()));
    }
    CHECK((a.score.w1.array().abs() <= static_cast<float>(init_bound(c.d))).all());
    CHECK((a.score.w2.array().abs() <= static_cast<float>(init_bound(c.hidden))).all());
    CHECK(a.score.b1.isZero());
    CHECK(a.reduction.b2.isZero());
    CHECK(a.global.b1.isZero());
    CHECK(a.z == 0.0f);
    validate_weights(a, c);

    AggregatorConfig other = c;
    other.seed = 12;
    CHECK_FALSE(init_weights<float>(other).score.w1.isApprox(a.score.w1));

    // Both precisions draw the same numbers.
    const auto d = init_weights<double>(c);
    CHECK(d.cast<float>().reduction.w1 == a.reduction.w1);
  }

  SUBCASE("sample mean at fan_in 768 within 3 standard errors") {
    AggregatorConfig c;
    c.m = 1;
    c.l = 1;
    c.g_dim = 0;
    c.hidden = 131;  // 131 * 768 > 1e5 entries in the score w1
    c.seed = 2024;
    const auto w = init_weights<double>(c);
    const Index samples = 100000;
    const double mean = Eigen::Map<const Vector<double>>(w.score.w1.data(), samples).mean();
    const double sigma = init_bound(768) / std::sqrt(3.0);
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(samples)));
  }

  SUBCASE("invalid config") {
    AggregatorConfig c = tiny_config();
    c.m = 0;
    CHECK_THROWS_AS(init_weights<float>(c), ConfigError);
  }
}

TEST_CASE("mlp2_forward") {
  SUBCASE("identity on nonnegative input") {
    const Vector<double> x = (Vector<double>(3) << 0.0, 1.5, 2.0).finished();
    CHECK(mlp2_forward(x, identity_mlp(3)) == x);
  }

  SUBCASE("relu clamps negatives") {
    const Vector<double> x = (Vector<double>(2) << -1.0, 2.0).finished();
    const Vector<double> y = mlp2_forward(x, identity_mlp(2));
    CHECK(y(0) == 0.0);
    CHECK(y(1) == 2.0);
  }

  SUBCASE("random 8->4->3 matches the naive oracle") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Mlp2Weights<double> mlp{random_matrix(4, 8, rng), salad::testing::random_vector(4, rng),
                              random_matrix(3, 4, rng), salad::testing::random_vector(3, rng)};
      const Vector<double> x = salad::testing::random_vector(8, rng);
      const Vector<double> y = mlp2_forward(x, mlp);
      const auto expect = oracle::mlp2(salad::testing::to_std(x), salad::testing::to_nested(mlp.w1),
                                       salad::testing::to_std(mlp.b1), salad::testing::to_nested(mlp.w2),
                                       salad::testing::to_std(mlp.b2));
      for (Index k = 0; k < 3; ++k) CHECK(std::abs(y(k) - expect[k]) < 1e-12);
    }
  }

  SUBCASE("row-wise batch equals per-vector forward, with mask") {
    std::mt19937_64 rng(8);
    Mlp2Weights<double> mlp{random_matrix(6, 5, rng), salad::testing::random_vector(6, rng),
                            random_matrix(2, 6, rng), salad::testing::random_vector(2, rng)};
    const Matrix<double> x = random_matrix(7, 5, rng);
    Rng mask_rng(1);
    const Matrix<double> mask = dropout_mask<double>(0.3, 7, 6, mask_rng);
    const Matrix<double> y = mlp2_forward_rows(x, mlp, &mask);
    for (Index r = 0; r < 7; ++r) {
      const Vector<double> row_mask = mask.row(r).transpose();
      const Vector<double> single = mlp2_forward(Vector<double>(x.row(r).transpose()), mlp, &row_mask);
      CHECK((y.row(r).transpose() - single).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("positively homogeneous in W2") {
    std::mt19937_64 rng(9);
    Mlp2Weights<double> mlp{random_matrix(6, 5, rng), salad::testing::random_vector(6, rng),
                            random_matrix(4, 6, rng), salad::testing::random_vector(4, rng)};
    const Vector<double> x = salad::testing::random_vector(5, rng);
    const Vector<double> base = mlp2_forward(x, mlp) - mlp.b2;
    Mlp2Weights<double> scaled = mlp;
    scaled.w2 *= 2.5;
    CHECK(((mlp2_forward(x, scaled) - mlp.b2) - 2.5 * base).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("shape mismatch") {
    const Vector<double> x = Vector<double>::Ones(4);
    CHECK_THROWS_AS(mlp2_forward(x, identity_mlp(3)), DimensionError);
    const Matrix<double> rows = Matrix<double>::Ones(2, 4);
    CHECK_THROWS_AS(mlp2_forward_rows(rows, identity_mlp(3)), DimensionError);
  }
}

TEST_CASE("dropout_mask") {
  SUBCASE("rate 0 keeps everything") {
    Rng rng(3);
    CHECK((dropout_mask<float>(0.0, 10, 10, rng).array() == 1.0f).all());
  }

  SUBCASE("zero fraction within 3 standard errors of the rate") {
    Rng rng(4);
    const Index count = 100000;
    const Matrix<double> mask = dropout_mask<double>(0.3, 1, count, rng);
    const double zeros = static_cast<double>((mask.array() == 0.0).count()) / static_cast<double>(count);
    const double se = std::sqrt(0.3 * 0.7 / static_cast<double>(count));
    CHECK(std::abs(zeros - 0.3) < 3.0 * se);
    CHECK(((mask.array() == 0.0) || (mask.array() == 1.0 / 0.7)).all());
  }

  SUBCASE("reproducible for a fixed seed") {
    Rng a(5), b(5);
    CHECK(dropout_mask<float>(0.3, 4, 9, a) == dropout_mask<float>(0.3, 4, 9, b));
  }

  SUBCASE("invalid rate") {
    Rng rng(6);
    CHECK_THROWS_AS(dropout_mask<float>(1.0, 2, 2, rng), ConfigError);
    CHECK_THROWS_AS(dropout_mask<float>(-0.01, 2, 2, rng), ConfigError);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("identity mlp passes the upstream gradient through") {
    ad::Tape<double> tape;
    const auto mlp = identity_mlp(3);
    const ad::Var x = tape.variable((Matrix<double>(1, 3) << 0.5, 1.0, 2.0).finished());
    const ad::Mlp2Vars vars{tape.constant(mlp.w1), tape.constant(Matrix<double>::Zero(1, 3)),
                            tape.constant(mlp.w2), tape.constant(Matrix<double>::Zero(1, 3))};
    const ad::Var y = ad::mlp2(tape, x, vars);
    const Matrix<double> upstream = (Matrix<double>(1, 3) << 0.3, -0.7, 1.1).finished();
    tape.backward(y, upstream);
    CHECK(tape.grad(x) == upstream);
  }

  SUBCASE("constant output graph gives zero gradients") {
    ad::Tape<double> tape;
    const ad::Var x = tape.variable(Matrix<double>::Ones(2, 3));
    const ad::Var y = ad::weighted_sum(tape, x, Matrix<double>(Matrix<double>::Zero(2, 3)));
    tape.backward(y);
    CHECK(tape.grad(x).isZero());
  }

  SUBCASE("usage errors") {
    ad::Tape<double> tape;
    ad::Tape<double> other;
    const ad::Var x = tape.variable(Matrix<double>::Ones(1, 1));
    CHECK_THROWS_AS(tape.grad(x), UsageError);  // no backward yet
    const ad::Var foreign = other.variable(Matrix<double>::Ones(1, 1));
    CHECK_THROWS_AS(tape.value(foreign), UsageError);
    tape.backward(x);
    CHECK_THROWS_AS(tape.grad(foreign), UsageError);
    CHECK_THROWS_AS(tape.grad(ad::Var{x.tape, 99}), UsageError);
    const ad::Var wide = tape.variable(Matrix<double>::Ones(1, 2));
    CHECK_THROWS_AS(tape.backward(wide), UsageError);
  }
}

TEST_CASE("every primitive matches central differences on 20 random instances") {
  using salad::testing::op_gradient_error;
  using Vars = std::vector<ad::Var>;
  std::mt19937_64 rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::linear(t, v[0], v[1], v[2]); },
                                              {random_matrix(5, 4, rng), random_matrix(3, 4, rng), random_matrix(1, 3, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::relu(t, v[0]); },
                                              {random_matrix(4, 6, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::multiply(t, v[0], v[1]); },
                                              {random_matrix(3, 3, rng), random_matrix(3, 3, rng)}, rng));
    worst = std::max(worst, op_gradient_error(
                                [](ad::Tape<double>& t, const Vars& v) { return ad::append_constant_column(t, v[0], v[1]); },
                                {random_matrix(4, 2, rng), random_matrix(1, 1, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::sinkhorn(t, v[0], 3); },
                                              {random_matrix(6, 3, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::drop_last_column(t, v[0]); },
                                              {random_matrix(4, 3, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::matmul_tn(t, v[0], v[1]); },
                                              {random_matrix(5, 3, rng), random_matrix(5, 2, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::concat_flat(t, v[0], v[1]); },
                                              {random_matrix(2, 3, rng), random_matrix(1, 4, rng)}, rng));
    worst = std::max(worst, op_gradient_error([](ad::Tape<double>& t, const Vars& v) { return ad::normalize(t, v[0]); },
                                              {random_matrix(3, 4, rng)}, rng));
    worst = std::max(worst, op_gradient_error(
                                [](ad::Tape<double>& t, const Vars& v) {
                                  const std::vector<ad::Var> rows{v[0], v[1]};
                                  return ad::stack_rows<double>(t, rows);
                                },
                                {random_matrix(1, 4, rng), random_matrix(1, 4, rng)}, rng));
  }
  CHECK(worst < 1e-4);
}
