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

#include <cstdio>

#include "salad/error.hpp"
#include "salad/oracle.hpp"
#include "salad/retrieval.hpp"
#include "support.hpp"

using namespace salad;

namespace {

Descriptor make(const std::string& id, std::initializer_list<float> xs) {
  Vector<float> v(static_cast<Index>(xs.size()));
  Index k = 0;
  for (float x : xs) v(k++) = x;
  return {id, v.normalized()};
}

std::string name(const char* prefix, int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, k);
  return buf;
}

std::vector<Descriptor> random_refs(int count, Index dim, std::mt19937_64& rng, const char* prefix = "r") {
  std::vector<Descriptor> out;
  for (int k = 0; k < count; ++k) out.push_back({name(prefix, k), salad::testing::random_unit(dim, rng)});
  return out;
}

oracle::DMatrix nested(const std::vector<Descriptor>& ds) {
  oracle::DMatrix out;
  for (const auto& d : ds) out.push_back(salad::testing::to_std(d.values));
  return out;
}

std::vector<std::string> ids_of(const std::vector<Descriptor>& ds) {
  std::vector<std::string> out;
  for (const auto& d : ds) out.push_back(d.id);
  return out;
}

}  // namespace

TEST_CASE("build_index") {
  std::mt19937_64 rng(1);
  const auto refs = random_refs(3, 4, rng);
  CHECK(build_index(refs).size() == 3);
  CHECK(build_index(refs).dim() == 4);

  CHECK_THROWS_AS(build_index(std::span<const Descriptor>{}), ValidationError);

  auto dup = refs;
  dup[2].id = dup[0].id;
  CHECK_THROWS_AS(build_index(dup), ValidationError);

  auto off = refs;
  off[1].values *= 1.001f;
  CHECK_THROWS_AS(build_index(off), ValidationError);

  auto mixed = refs;
  mixed.push_back({"other", salad::testing::random_unit(5, rng)});
  CHECK_THROWS_AS(build_index(mixed), ValidationError);

  const std::vector<std::optional<GeoTag>> short_tags(2);
  CHECK_THROWS_AS(build_index(refs, short_tags), ValidationError);
}

TEST_CASE("query_topk") {
  std::mt19937_64 rng(2);

  SUBCASE("stored descriptor ranks first with similarity one") {
    const auto refs = random_refs(10, 8, rng);
    const auto index = build_index(refs);
    const auto top = query_topk(index, refs[6], 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].id == refs[6].id);
    CHECK(top[0].index == 6);
    CHECK(std::abs(top[0].similarity - 1.0) < 1e-6);
    CHECK(top[0].similarity >= top[1].similarity);
    CHECK(top[1].similarity >= top[2].similarity);
  }

  SUBCASE("k larger than the index returns everything") {
    const auto refs = random_refs(4, 3, rng);
    CHECK(query_topk(build_index(refs), refs[0], 10).size() == 4);
  }

  SUBCASE("ties break by ascending id") {
    const std::vector<Descriptor> refs{make("c", {1, 0}), make("a", {1, 0}), make("b", {0, 1}), make("d", {1, 0})};
    const auto top = query_topk(build_index(refs), make("q", {1, 0}), 4);
    CHECK(top[0].id == "a");
    CHECK(top[1].id == "c");
    CHECK(top[2].id == "d");
    CHECK(top[3].id == "b");
  }

  SUBCASE("dimension mismatch") {
    const auto refs = random_refs(4, 3, rng);
    CHECK_THROWS_AS(query_topk(build_index(refs), make("q", {1, 0}), 1), DimensionError);
  }

  SUBCASE("50 queries against 20 references match a full sort") {
    auto refs = random_refs(20, 6, rng);
    refs[7].values = refs[3].values;  // planted exact tie
    const auto index = build_index(refs);
    const auto queries = random_refs(50, 6, rng, "q");
    for (const auto& q : queries) {
      for (Index k : {1, 5, 20, 25}) {
        const auto got = query_topk(index, q, k);
        const auto expect = oracle::topk_full_sort(nested(refs), ids_of(refs), salad::testing::to_std(q.values),
                                                   static_cast<std::size_t>(k));
        REQUIRE(got.size() == expect.size());
        for (std::size_t r = 0; r < got.size(); ++r) {
          CHECK(got[r].id == expect[r].id);
          CHECK(std::abs(got[r].similarity - expect[r].similarity) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("is_positive") {
  const auto planar = PositiveMode::planar;
  const auto frame = PositiveMode::frame;
  CHECK(is_positive(PlanarPosition{0, 0}, PlanarPosition{24.9, 0}, planar));
  CHECK_FALSE(is_positive(PlanarPosition{0, 0}, PlanarPosition{25.0, 0}, planar));
  CHECK(is_positive(PlanarPosition{0, 0}, PlanarPosition{15, 19.9}, planar));
  CHECK(is_positive(FrameIndex{10}, FrameIndex{12}, frame));
  CHECK(is_positive(FrameIndex{10}, FrameIndex{8}, frame));
  CHECK_FALSE(is_positive(FrameIndex{10}, FrameIndex{13}, frame));
  CHECK_THROWS_AS(is_positive(PlanarPosition{0, 0}, FrameIndex{1}, planar), UsageError);
  CHECK_THROWS_AS(is_positive(FrameIndex{1}, FrameIndex{1}, planar), UsageError);
  CHECK_THROWS_AS(is_positive(PlanarPosition{0, 0}, PlanarPosition{0, 0}, frame), UsageError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-40, 40);
  std::uniform_int_distribution<int> f(0, 8);
  for (int k = 0; k < 200; ++k) {
    const PlanarPosition a{u(rng), u(rng)}, b{u(rng), u(rng)};
    CHECK(is_positive(a, b, planar) == is_positive(b, a, planar));
    const FrameIndex x{f(rng)}, y{f(rng)};
    CHECK(is_positive(x, y, frame) == is_positive(y, x, frame));
  }
}

TEST_CASE("recall_at_k examples") {
  // Four references spaced far apart; two queries near r0.
  const std::vector<Descriptor> refs{make("r0", {1, 0, 0, 0}), make("r1", {0, 1, 0, 0}), make("r2", {0, 0, 1, 0}),
                                     make("r3", {0, 0, 0, 1})};
  const std::vector<std::optional<GeoTag>> tags{PlanarPosition{0, 0}, PlanarPosition{100, 0},
                                                PlanarPosition{200, 0}, PlanarPosition{300, 0}};
  const auto index = build_index(refs, tags);
  const std::vector<int> ks{5, 1};

  SUBCASE("positives at rank 1 and rank 3") {
    const std::vector<EvalQuery> queries{
        {make("q0", {1, 0.1f, 0, 0}), PlanarPosition{1, 1}},      // r0 first
        {make("q1", {0.2f, 0.9f, 0.5f, 0}), PlanarPosition{2, 0}},  // r1, r2, then r0
    };
    const auto report = recall_at_k(index, queries, ks, PositiveMode::planar);
    CHECK(report.evaluated == 2);
    CHECK(report.excluded == 0);
    CHECK(report.at(1) == 0.5);
    CHECK(report.at(5) == 1.0);
    CHECK(report.recall.front().first == 1);
    CHECK_THROWS_AS(report.at(3), ValidationError);
    CHECK(format_report(report) == "R@1: 0.5000\nR@5: 1.0000\n");
  }

  SUBCASE("all positives first gives one") {
    const std::vector<EvalQuery> queries{{make("q0", {0, 0, 1, 0}), PlanarPosition{200, 3}},
                                         {make("q1", {0, 0, 0, 1}), PlanarPosition{299, 0}}};
    CHECK(recall_at_k(index, queries, ks, PositiveMode::planar).at(1) == 1.0);
  }

  SUBCASE("queries without positives are excluded") {
    const std::vector<EvalQuery> queries{{make("q0", {1, 0, 0, 0}), PlanarPosition{0, 0}},
                                         {make("q1", {1, 0, 0, 0}), PlanarPosition{50, 0}}};
    const auto report = recall_at_k(index, queries, ks, PositiveMode::planar);
    CHECK(report.evaluated == 1);
    CHECK(report.excluded == 1);
    CHECK(report.at(1) == 1.0);
  }

  SUBCASE("references with the query id are skipped") {
    const std::vector<EvalQuery> queries{{make("r0", {1, 0, 0, 0}), PlanarPosition{0, 0}}};
    const auto report = recall_at_k(index, queries, ks, PositiveMode::planar);
    CHECK(report.evaluated == 0);
    CHECK(report.excluded == 1);
  }

  SUBCASE("errors") {
    const std::vector<EvalQuery> none;
    CHECK_THROWS_AS(recall_at_k(index, none, ks, PositiveMode::planar), ValidationError);
    const std::vector<EvalQuery> one{{make("q", {1, 0, 0, 0}), PlanarPosition{0, 0}}};
    const std::vector<int> bad{0};
    CHECK_THROWS_AS(recall_at_k(index, one, bad, PositiveMode::planar), ValidationError);
    CHECK_THROWS_AS(recall_at_k(index, one, std::span<const int>{}, PositiveMode::planar), ValidationError);
    CHECK_THROWS_AS(recall_at_k(build_index(refs), one, ks, PositiveMode::planar), ValidationError);
    CHECK_THROWS_AS(recall_at_k(index, one, ks, PositiveMode::frame), UsageError);
  }
}

TEST_CASE("recall on 100 queries and 1000 references matches the full-scan oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> where(0.0, 2000.0);
  std::normal_distribution<double> jitter(0.0, 8.0);
  const Index dim = 16;

  for (PositiveMode mode : {PositiveMode::planar, PositiveMode::frame}) {
    auto refs = random_refs(1000, dim, rng);
    std::vector<GeoTag> tags;
    for (int r = 0; r < 1000; ++r) {
      if (mode == PositiveMode::planar) {
        tags.push_back(PlanarPosition{where(rng), where(rng)});
      } else {
        tags.push_back(FrameIndex{r * 3});
      }
    }
    const std::vector<std::optional<GeoTag>> opt_tags(tags.begin(), tags.end());
    const auto index = build_index(refs, opt_tags);

    // Each query is a noisy copy of a planted reference, placed near it.
    std::vector<EvalQuery> queries;
    std::vector<oracle::RecallCase> cases;
    std::uniform_int_distribution<int> pick(0, 999);
    std::normal_distribution<double> noise(0.0, 0.35);
    for (int q = 0; q < 100; ++q) {
      const int planted = pick(rng);
      Vector<double> v = refs[static_cast<std::size_t>(planted)].values.cast<double>();
      for (Index k = 0; k < dim; ++k) v(k) += noise(rng);
      GeoTag tag;
      if (mode == PositiveMode::planar) {
        const auto& c = std::get<PlanarPosition>(tags[static_cast<std::size_t>(planted)]);
        tag = PlanarPosition{c.x + jitter(rng), c.y + jitter(rng)};
      } else {
        tag = FrameIndex{planted * 3 + q % 2};
      }
      // Every tenth query has no positive at all.
      if (q % 10 == 9) tag = mode == PositiveMode::planar ? GeoTag{PlanarPosition{-500, -500}} : GeoTag{FrameIndex{-100}};
      const Descriptor d{name("q", q), v.normalized().cast<float>()};
      queries.push_back({d, tag});
      cases.push_back({d.id, salad::testing::to_std(d.values), tag});
    }

    const std::vector<int> ks{1, 5, 10, 20};
    const auto report = recall_at_k(index, queries, ks, mode);
    std::size_t evaluated = 0;
    const auto expect = oracle::recall_full_scan(nested(refs), ids_of(refs), tags, cases, ks, mode, &evaluated);
    CHECK(report.evaluated == static_cast<Index>(evaluated));
    CHECK(report.excluded == 100 - static_cast<Index>(evaluated));
    for (std::size_t s = 0; s < ks.size(); ++s) CHECK(report.at(ks[s]) == expect[s]);
    for (std::size_t s = 1; s < report.recall.size(); ++s) {
      CHECK(report.recall[s - 1].second <= report.recall[s].second);
    }
    CHECK(report.at(1) > 0.0);
    CHECK(report.at(20) < 1.0 + 1e-15);
  }
}
