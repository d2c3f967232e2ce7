// Copyright 2026 The nirchem Authors.
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


#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "nirchem/error.hpp"
#include "nirchem/hyperopt.hpp"
#include "support.hpp"

using namespace nirchem;

namespace {

SearchSpace mixed_space() {
  SearchSpace s;
  s.dims = {{"a", Dimension::Kind::real, -2.0, 2.0}, {"b", Dimension::Kind::integer, 1.0, 20.0}};
  return s;
}

double bowl(const std::vector<double>& p) { return (p[0] - 0.5) * (p[0] - 0.5) + 0.01 * (p[1] - 7.0) * (p[1] - 7.0); }

OptimizeOptions small_options(std::uint64_t seed) {
  OptimizeOptions o;
  o.n_init = 5;
  o.n_iter = 10;
  o.seed = seed;
  o.candidates = 256;
  o.gp.restarts = 3;
  return o;
}

}  // namespace

TEST_CASE("search space snapping and containment") {
  const auto s = mixed_space();
  const std::vector<double> p{3.0, 4.6};
  const auto snapped = s.snap(p);
  CHECK(snapped == std::vector<double>{2.0, 5.0});
  CHECK(s.contains(snapped));
  CHECK_FALSE(s.contains(p));
  CHECK_FALSE(s.contains(std::vector<double>{0.0}));
  SearchSpace bad;
  bad.dims = {{"x", Dimension::Kind::real, 1.0, 1.0}};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("regressor search space maps to specs and back") {
  const auto s = cnn_search_space();
  REQUIRE(s.size() == 6);
  const std::vector<double> p{14, 29, 30, 22, 0.045, 176};
  CHECK(s.contains(p));
  const auto spec = spec_from_point(p, 600);
  CHECK(spec.k1 == 14);
  CHECK(spec.f1 == 29);
  CHECK(spec.k2 == 30);
  CHECK(spec.f2 == 22);
  CHECK(spec.dropout_rate == 0.045);
  CHECK(spec.dense_units == 176);
  CHECK(spec.input_len == 600);
  CHECK(point_from_spec(spec) == p);
  CHECK(spec.within_search_space());
}

TEST_CASE("optimizer finds the bottom of a bowl") {
  auto o = small_options(1);
  o.n_iter = 25;
  const auto r = optimize(mixed_space(), bowl, o);
  CHECK(r.trace.size() == 30);
  CHECK(r.best.objective < 0.05);
  CHECK(bowl(r.best.params) == r.best.objective);
}

TEST_CASE("one-dimensional quadratic agrees with a grid search") {
  SearchSpace s;
  s.dims = {{"x", Dimension::Kind::real, 0.0, 1.0}};
  const Objective f = [](const std::vector<double>& p) { return (p[0] - 0.3) * (p[0] - 0.3); };
  double grid_best = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = i / 10000.0;
    if (f({x}) < f({grid_best})) grid_best = x;
  }
  OptimizeOptions o;
  o.seed = 12;
  const auto r = optimize(s, f, o);
  CHECK(r.trace.size() == 60);
  CHECK(std::abs(r.best.params[0] - grid_best) <= 0.05);
}

TEST_CASE("every proposal is snapped into the space") {
  const auto s = mixed_space();
  const auto r = optimize(s, bowl, small_options(2));
  for (const auto& t : r.trace) {
    CHECK(s.contains(t.params));
    CHECK(t.params[1] == std::round(t.params[1]));
  }
}

TEST_CASE("random phase only when there are no surrogate iterations") {
  auto o = small_options(3);
  o.n_iter = 0;
  const auto r = optimize(mixed_space(), bowl, o);
  CHECK(r.trace.size() == 5);
  auto o2 = o;
  o2.n_iter = 10;
  const auto r2 = optimize(mixed_space(), bowl, o2);
  // The initial design does not depend on the number of later iterations.
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.trace[i].params == r2.trace[i].params);
}

TEST_CASE("best-so-far is non-increasing") {
  const auto r = optimize(mixed_space(), bowl, small_options(4));
  const auto best = best_so_far(r.trace);
  REQUIRE(best.size() == r.trace.size());
  for (std::size_t i = 1; i < best.size(); ++i) CHECK(best[i] <= best[i - 1]);
  CHECK(best.back() == r.best.objective);
}

TEST_CASE("runs are bit-reproducible for a fixed seed") {
  const auto a = optimize(mixed_space(), bowl, small_options(5));
  const auto b = optimize(mixed_space(), bowl, small_options(5));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].params == b.trace[i].params);
    CHECK(a.trace[i].objective == b.trace[i].objective);
  }
  const auto c = optimize(mixed_space(), bowl, small_options(6));
  CHECK(c.trace[0].params != a.trace[0].params);
}

TEST_CASE("an interrupted run resumes from its trace") {
  const auto dir = testing::scratch_dir("bo_resume");
  auto full = small_options(7);
  full.trace_path = dir / "full.jsonl";
  const auto reference = optimize(mixed_space(), bowl, full);

  auto partial = small_options(7);
  partial.n_iter = 3;
  partial.trace_path = dir / "resumed.jsonl";
  optimize(mixed_space(), bowl, partial);
  int calls = 0;
  const Objective counted = [&](const std::vector<double>& p) {
    ++calls;
    return bowl(p);
  };
  auto rest = small_options(7);
  rest.trace_path = partial.trace_path;
  const auto resumed = optimize(mixed_space(), counted, rest);
  CHECK(calls == 7);
  REQUIRE(resumed.trace.size() == reference.trace.size());
  for (std::size_t i = 0; i < resumed.trace.size(); ++i) {
    CHECK(resumed.trace[i].params == reference.trace[i].params);
    CHECK(resumed.trace[i].objective == reference.trace[i].objective);
  }
  CHECK(load_trace(*rest.trace_path).size() == 15);

  SearchSpace other;
  other.dims = {{"a", Dimension::Kind::real, 10.0, 11.0}, {"b", Dimension::Kind::integer, 1.0, 20.0}};
  CHECK_THROWS_AS(optimize(other, bowl, rest), Error);
}

TEST_CASE("failed trials are recorded with the worst objective so far") {
  int call = 0;
  const Objective flaky = [&](const std::vector<double>& p) {
    ++call;
    if (call == 3) throw Error("diverged");
    if (call == 5) return std::nan("");
    return bowl(p);
  };
  const auto r = optimize(mixed_space(), flaky, small_options(8));
  REQUIRE(r.trace.size() == 15);
  CHECK(r.trace[2].status == Trial::Status::failed);
  CHECK(r.trace[2].objective == std::max(r.trace[0].objective, r.trace[1].objective));
  CHECK(r.trace[4].status == Trial::Status::failed);
  double worst = -INFINITY;
  for (std::size_t i = 0; i < 4; ++i) {
    if (r.trace[i].status == Trial::Status::ok) worst = std::max(worst, r.trace[i].objective);
  }
  CHECK(r.trace[4].objective == worst);
  CHECK(r.best.status == Trial::Status::ok);
}

TEST_CASE("all trials failing is an error") {
  const Objective broken = [](const std::vector<double>&) -> double { throw Error("always"); };
  auto o = small_options(9);
  o.n_iter = 2;
  CHECK_THROWS_AS(optimize(mixed_space(), broken, o), Error);
  o.n_init = 1;
  CHECK_THROWS_AS(optimize(mixed_space(), bowl, o), Error);
}

TEST_CASE("trial JSON lines round-trip and store NaN as null") {
  Trial t;
  t.params = {0.25, 3.0};
  t.objective = 1.5;
  const auto back = trial_from_json(trial_to_json(t, 4));
  CHECK(back.params == t.params);
  CHECK(back.objective == t.objective);
  CHECK(back.status == Trial::Status::ok);

  Trial f;
  f.params = {0.0, 1.0};
  f.objective = std::nan("");
  f.status = Trial::Status::failed;
  const auto line = trial_to_json(f, 0);
  CHECK(line.find("null") != std::string::npos);
  const auto fb = trial_from_json(line);
  CHECK(std::isnan(fb.objective));
  CHECK(fb.status == Trial::Status::failed);
  CHECK_THROWS_AS(trial_from_json("{\"params\":[1],\"objective\":null,\"status\":\"ok\"}"), Error);
  CHECK_THROWS_AS(trial_from_json("not json"), Error);
}

TEST_CASE("convergence CSV") {
  std::vector<Trial> trace(3);
  trace[0].params = {0.0};
  trace[0].objective = 2.0;
  trace[1].params = {1.0};
  trace[1].objective = 2.0;
  trace[1].status = Trial::Status::failed;
  trace[2].params = {2.0};
  trace[2].objective = 1.0;
  const auto path = testing::scratch_dir("bo_csv") / "convergence.csv";
  write_convergence_csv(trace, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,objective,best,status");
  std::getline(in, line);
  CHECK(line == "1,2,2,ok");
  std::getline(in, line);
  CHECK(line == "2,2,2,failed");
  std::getline(in, line);
  CHECK(line == "3,1,1,ok");
}
