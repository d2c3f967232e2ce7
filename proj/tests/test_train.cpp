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
#include <fstream>
#include <string>

#include "doctest.h"
#include "nirchem/cnn.hpp"
#include "nirchem/error.hpp"
#include "nirchem/loss.hpp"
#include "support.hpp"

using namespace nirchem;

namespace {

CnnSpec small_spec() {
  CnnSpec s;
  s.input_len = 32;
  s.k1 = 3;
  s.f1 = 5;
  s.k2 = 3;
  s.f2 = 5;
  s.dense_units = 8;
  s.dropout_rate = 0.1;
  s.noise_std = 0.01;
  return s;
}

// Targets are a fixed linear functional of the spectrum.
SpectraSet linear_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SpectraSet set;
  set.grid = WavelengthGrid{1000.0, 2.0, 32};
  set.absorbance.resize(static_cast<Eigen::Index>(n), 32);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0.0;
    for (Eigen::Index j = 0; j < 32; ++j) {
      const double v = rng.normal();
      set.absorbance(static_cast<Eigen::Index>(i), j) = v;
      if (j >= 10 && j < 20) y += 0.3 * v;
    }
    set.reference_mg.push_back(y);
    set.instrument.push_back(1);
    set.sample_id.push_back("s" + std::to_string(seed) + "_" + std::to_string(i));
  }
  return set;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.batch_size = 8;
  c.epochs = 6;
  c.plateau_patience = 2;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("huber loss values") {
  const std::vector<double> small{0.5};
  const std::vector<double> large{2.0};
  const std::vector<double> mixed{0.5, -2.0};
  CHECK(huber(std::vector<double>{0.0}, 1.0) == 0.0);
  CHECK(huber(small, 1.0) == doctest::Approx(0.125));
  CHECK(huber(large, 1.0) == doctest::Approx(1.5));
  CHECK(huber(mixed, 1.0) == doctest::Approx((0.125 + 1.5) / 2.0));
  CHECK(huber(large, 3.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(huber(std::vector<double>{}, 1.0), Error);
  CHECK_THROWS_AS(huber(small, 0.0), Error);
  CHECK(huber_derivative(0.3, 1.0) == 0.3);
  CHECK(huber_derivative(4.0, 1.0) == 1.0);
  CHECK(huber_derivative(-4.0, 1.0) == -1.0);
}

TEST_CASE("huber is continuous and convex around the threshold") {
  for (const double delta : {0.5, 1.0, 2.0}) {
    const std::vector<double> below{delta - 1e-9};
    const std::vector<double> above{delta + 1e-9};
    CHECK(std::abs(huber(below, delta) - huber(above, delta)) < 1e-8);
  }
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = 4.0 * rng.normal();
    const double b = 4.0 * rng.normal();
    const double t = rng.uniform();
    const std::vector<double> ra{a};
    const std::vector<double> rb{b};
    const std::vector<double> rm{t * a + (1.0 - t) * b};
    CHECK(huber(rm, 1.0) <= t * huber(ra, 1.0) + (1.0 - t) * huber(rb, 1.0) + 1e-12);
  }
}

TEST_CASE("plateau scheduler halves after patience non-improving epochs") {
  PlateauScheduler s(1.0, 2, 0.5);
  s.observe(1.0);
  CHECK(s.learning_rate() == 1.0);
  s.observe(1.0);  // equal is not an improvement
  CHECK(s.learning_rate() == 1.0);
  s.observe(1.5);
  CHECK(s.learning_rate() == 0.5);
  s.observe(2.0);
  CHECK(s.learning_rate() == 0.5);
  s.observe(0.9);
  s.observe(0.95);
  CHECK(s.learning_rate() == 0.5);
  s.observe(0.95);
  CHECK(s.learning_rate() == 0.25);

  PlateauScheduler constant(0.1, 1, 1.0);
  for (int i = 0; i < 20; ++i) constant.observe(1.0);
  CHECK(constant.learning_rate() == 0.1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto tr = linear_set(40, 1);
  const auto va = linear_set(12, 2);
  auto a = CnnModel::build(small_spec(), 5);
  auto b = CnnModel::build(small_spec(), 5);
  const auto ha = train(a, tr, va, quick_config());
  const auto hb = train(b, tr, va, quick_config());
  CHECK(ha.val_loss == hb.val_loss);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));

  auto c = CnnModel::build(small_spec(), 5);
  auto cfg = quick_config();
  cfg.seed = 18;
  const auto hc = train(c, tr, va, cfg);
  CHECK(hc.val_loss != ha.val_loss);
}

TEST_CASE("training lowers the training loss") {
  const auto tr = linear_set(60, 3);
  const auto va = linear_set(20, 4);
  auto model = CnnModel::build(small_spec(), 6);
  auto cfg = quick_config();
  cfg.epochs = 30;
  const auto pred = predict(model, tr.absorbance);
  std::vector<double> r(pred.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = pred[i] - tr.reference_mg[i];
  const double before = huber(r, 1.0);
  const auto h = train(model, tr, va, cfg);
  REQUIRE(h.epochs() == 30);
  CHECK_FALSE(h.aborted);
  CHECK(h.train_loss.back() < before);
  CHECK(h.train_loss.back() < h.train_loss.front());
}

TEST_CASE("a unit plateau factor keeps the rate constant regardless of patience") {
  const auto tr = linear_set(30, 5);
  const auto va = linear_set(10, 6);
  auto a = CnnModel::build(small_spec(), 7);
  auto b = CnnModel::build(small_spec(), 7);
  auto ca = quick_config();
  ca.plateau_factor = 1.0;
  ca.plateau_patience = 1;
  auto cb = ca;
  cb.plateau_patience = 50;
  const auto ha = train(a, tr, va, ca);
  const auto hb = train(b, tr, va, cb);
  CHECK(ha.val_loss == hb.val_loss);
  for (const double lr : ha.learning_rate) CHECK(lr == ca.learning_rate);
}

TEST_CASE("zero epochs leave the model untouched") {
  const auto tr = linear_set(10, 7);
  auto model = CnnModel::build(small_spec(), 8);
  const std::vector<double> before(model.params().begin(), model.params().end());
  auto cfg = quick_config();
  cfg.epochs = 0;
  const auto h = train(model, tr, tr, cfg);
  CHECK(h.epochs() == 0);
  CHECK(std::equal(before.begin(), before.end(), model.params().begin()));
}

TEST_CASE("divergent training is reported, not thrown") {
  const auto tr = linear_set(20, 8);
  auto model = CnnModel::build(small_spec(), 9);
  auto cfg = quick_config();
  cfg.learning_rate = 1e300;
  const auto h = train(model, tr, tr, cfg);
  CHECK(h.aborted);
  CHECK_FALSE(h.abort_reason.empty());
}

TEST_CASE("train rejects bad inputs") {
  const auto tr = linear_set(10, 9);
  auto model = CnnModel::build(small_spec(), 1);
  auto cfg = quick_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(model, tr, tr, cfg), Error);
  cfg = quick_config();
  cfg.plateau_factor = 1.5;
  CHECK_THROWS_AS(train(model, tr, tr, cfg), Error);
  auto other = small_spec();
  other.input_len = 40;
  auto wrong = CnnModel::build(other, 1);
  CHECK_THROWS_AS(train(wrong, tr, tr, quick_config()), Error);
}

TEST_CASE("tail mean of the validation loss") {
  TrainHistory h;
  h.val_loss = {5.0, 4.0, 3.0, 2.0};
  CHECK(tail_mean_val_loss(h, 2) == doctest::Approx(2.5));
  CHECK(tail_mean_val_loss(h, 10) == doctest::Approx(3.5));
  CHECK_THROWS_AS(tail_mean_val_loss(TrainHistory{}, 10), Error);
}

TEST_CASE("history export has one row per epoch") {
  TrainHistory h;
  h.train_loss = {1.0, 0.5};
  h.val_loss = {1.5, 0.75};
  h.learning_rate = {0.1, 0.05};
  const auto path = testing::scratch_dir("train_history") / "history.csv";
  write_history_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,val_loss,lr");
  std::getline(in, line);
  CHECK(line == "1,1,1.5,0.1");
  std::getline(in, line);
  CHECK(line == "2,0.5,0.75,0.05");
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("frozen validation loss halves the rate every patience epochs") {
  PlateauScheduler s(0.8, 3, 0.5);
  std::vector<double> rates;
  for (int e = 0; e < 10; ++e) {
    s.observe(2.0);
    rates.push_back(s.learning_rate());
  }
  // The first observation sets the best value; each further 3 equal losses halve.
  CHECK(rates == std::vector<double>{0.8, 0.8, 0.8, 0.4, 0.4, 0.4, 0.2, 0.2, 0.2, 0.1});
}

TEST_CASE("a tiny model learns linear data") {
  const auto tr = linear_set(400, 21);
  const auto va = linear_set(100, 22);
  CnnSpec spec = small_spec();
  spec.dropout_rate = 0.0;
  auto model = CnnModel::build(spec, 23);
  auto cfg = quick_config();
  cfg.epochs = 200;
  cfg.plateau_patience = 10;
  const auto h = train(model, tr, va, cfg);
  REQUIRE(h.epochs() == 200);
  CHECK(h.val_loss.back() < 0.1 * h.val_loss.front());
}
