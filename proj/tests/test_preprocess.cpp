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
#include <numeric>

#include <Eigen/Dense>

#include "doctest.h"
#include "nirchem/error.hpp"
#include "nirchem/preprocess.hpp"

using namespace nirchem;

namespace {

SpectraSet synthetic(std::size_t n, std::size_t count, std::uint64_t seed = 1) {
  SyntheticConfig cfg;
  cfg.n_samples = n;
  cfg.grid = {600.0, 2.0, count};
  cfg.seed = seed;
  return synthesize(cfg);
}

// Least squares via the normal equations, independent of the projector used
// by the library.
Eigen::VectorXd normal_equations(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  return (a.transpose() * a).ldlt().solve(a.transpose() * b);
}

}  // namespace

TEST_CASE("slope ramp has mean one and the stated end points") {
  for (const double s : {0.95, 1.0, 1.05, 0.5, 3.0}) {
    for (const std::size_t n : {2u, 3u, 600u, 1001u}) {
      const Vector r = slope_ramp(n, s);
      CHECK(std::abs(r.mean() - 1.0) < 1e-12);
      CHECK(r[0] == doctest::Approx(2.0 - s).epsilon(1e-14));
      CHECK(r[static_cast<Eigen::Index>(n - 1)] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("augmentation applies multiplier, ramp and offset") {
  const Vector x = Vector::LinSpaced(11, 0.2, 1.2);
  const AugmentDraw d{0.03, 1.07, 1.04};
  const Vector y = apply_augmentation(x, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double t = -1.0 + 2.0 * static_cast<double>(i) / 10.0;
    const double ramp = 1.0 + 0.04 * t;
    CHECK(y[i] == doctest::Approx(x[i] * 1.07 * ramp + 0.03).epsilon(1e-14));
  }
}

TEST_CASE("augment multiplies the set size and keeps originals first") {
  const auto set = synthetic(40, 30);
  AugmentConfig cfg;
  cfg.seed = 5;
  const double sd = global_std(set);
  const auto out = augment(set, cfg, sd);
  REQUIRE(out.size() == 400);
  CHECK(out.absorbance.topRows(40) == set.absorbance);
  for (std::size_t k = 1; k <= 9; ++k) {
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(out.reference_mg[k * 40 + i] == set.reference_mg[i]);
      CHECK(out.instrument[k * 40 + i] == set.instrument[i]);
      CHECK(out.sample_id[k * 40 + i] == set.sample_id[i] + "#" + std::to_string(k));
    }
  }
  CHECK_NOTHROW(out.validate());

  // Draws respect their ranges.
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t k = 1; k <= 9; ++k) {
      const auto d = augment_draw(cfg, sd, i, k);
      CHECK(std::abs(d.offset) <= 0.1 * sd);
      CHECK(std::abs(d.multiplier - 1.0) <= 0.1 * sd);
      CHECK(d.slope >= 0.95);
      CHECK(d.slope <= 1.05);
      const Vector expect = apply_augmentation(set.absorbance.row(static_cast<Eigen::Index>(i)).transpose(), d);
      CHECK(out.absorbance.row(static_cast<Eigen::Index>(k * 40 + i)).transpose() == expect);
    }
  }
}

TEST_CASE("zero-amplitude augmentation is an exact identity") {
  const auto set = synthetic(15, 20);
  AugmentConfig cfg;
  cfg.offset_scale = 0.0;
  cfg.mult_scale = 0.0;
  cfg.slope_low = 1.0;
  cfg.slope_high = 1.0;
  const auto out = augment(set, cfg, global_std(set));
  for (std::size_t k = 0; k <= 9; ++k) CHECK(out.absorbance.middleRows(static_cast<Eigen::Index>(k * 15), 15) == set.absorbance);
}

TEST_CASE("augment with zero copies returns the input") {
  const auto set = synthetic(5, 10);
  AugmentConfig cfg;
  cfg.copies = 0;
  const auto out = augment(set, cfg, 1.0);
  CHECK(out.absorbance == set.absorbance);
  CHECK(out.sample_id == set.sample_id);
  cfg.copies = -1;
  CHECK_THROWS_AS(augment(set, cfg, 1.0), Error);
}

TEST_CASE("augmentation draws depend only on seed, sample and copy") {
  AugmentConfig cfg;
  cfg.seed = 77;
  const auto a = augment_draw(cfg, 0.3, 12, 4);
  const auto b = augment_draw(cfg, 0.3, 12, 4);
  CHECK(a.offset == b.offset);
  CHECK(a.multiplier == b.multiplier);
  CHECK(a.slope == b.slope);
  const auto c = augment_draw(cfg, 0.3, 12, 5);
  CHECK(a.slope != c.slope);
}

TEST_CASE("emsc returns the reference unchanged") {
  const auto set = synthetic(60, 120);
  const auto model = emsc_fit(set, 1);
  SpectraSet ref = set.subset(std::vector<std::size_t>{0});
  ref.absorbance.row(0) = model.reference.transpose();
  const auto out = emsc_apply(model, ref);
  CHECK((out.absorbance.row(0).transpose() - model.reference).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("emsc coefficients match an independent least-squares fit") {
  const auto set = synthetic(30, 80);
  const auto model = emsc_fit(set, 1);
  const Eigen::Index n = model.reference.size();
  Eigen::MatrixXd basis(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    basis(i, 0) = 1.0;
    basis(i, 1) = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    basis(i, 2) = model.reference[i];
  }
  // Spectrum with known scatter: a + b * axis + c * reference.
  const Eigen::VectorXd z = 0.3 * basis.col(0) - 0.12 * basis.col(1) + 1.7 * basis.col(2);
  const auto coef = emsc_coefficients(model, z);
  CHECK(coef.baseline[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(coef.baseline[1] == doctest::Approx(-0.12).epsilon(1e-9));
  CHECK(coef.multiplier == doctest::Approx(1.7).epsilon(1e-9));

  const Eigen::VectorXd x = set.absorbance.row(5).transpose();
  const Eigen::VectorXd oracle = normal_equations(basis, x);
  const auto got = emsc_coefficients(model, x);
  CHECK(got.baseline[0] == doctest::Approx(oracle[0]).epsilon(1e-8));
  CHECK(got.baseline[1] == doctest::Approx(oracle[1]).epsilon(1e-8));
  CHECK(got.multiplier == doctest::Approx(oracle[2]).epsilon(1e-8));
}

TEST_CASE("emsc is idempotent on corrected spectra") {
  const auto set = synthetic(50, 100);
  const auto model = emsc_fit(set, 1);
  const auto once = emsc_apply(model, set);
  const auto twice = emsc_apply(model, once);
  CHECK((once.absorbance - twice.absorbance).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("emsc rejects degenerate bases and multipliers") {
  CHECK_THROWS_AS(emsc_model(Vector::Constant(50, 2.0), 1), Error);
  CHECK_THROWS_AS(emsc_model(Vector::LinSpaced(50, 0.0, 1.0), 1), Error);
  CHECK_THROWS_AS(emsc_model(Vector::Zero(50), 1), Error);
  const auto set = synthetic(10, 50);
  const auto model = emsc_fit(set, 1);
  auto flat = set.subset(std::vector<std::size_t>{0});
  flat.absorbance.row(0).setConstant(0.4);
  CHECK_THROWS_AS(emsc_apply(model, flat), Error);
  auto wrong = synthetic(3, 40);
  CHECK_THROWS_AS(emsc_apply(model, wrong), Error);
}

TEST_CASE("global scaling yields mean zero and std one half on train") {
  const auto set = synthetic(80, 60);
  const auto scaler = scaler_fit(set);
  const auto out = scaler_apply(scaler, set);
  CHECK(std::abs(global_mean(out)) < 1e-10);
  CHECK(std::abs(global_std(out) - 0.5) < 1e-10);
  auto flat = set;
  flat.absorbance.setConstant(1.0);
  CHECK_THROWS_AS(scaler_fit(flat), Error);
}

TEST_CASE("chain order is DA, EMSC, GS") {
  PreprocessChain chain;
  chain.steps = {PreprocessStep::augment, PreprocessStep::emsc, PreprocessStep::global_scaling};
  CHECK_NOTHROW(chain.validate_order());
  chain.steps = {PreprocessStep::emsc, PreprocessStep::augment};
  CHECK_THROWS_AS(chain.validate_order(), Error);
  chain.steps = {PreprocessStep::global_scaling, PreprocessStep::global_scaling};
  CHECK_THROWS_AS(chain.validate_order(), Error);
  CHECK_THROWS_AS(parse_step("SNV"), Error);
  CHECK(parse_step("EMSC") == PreprocessStep::emsc);
}

TEST_CASE("fit_chain augments train and validation but not test") {
  const auto set = synthetic(200, 40);
  const auto splits = standard_split(set, 0.2, 0.2, 3);
  PreprocessChain chain;
  chain.steps = {PreprocessStep::augment, PreprocessStep::emsc, PreprocessStep::global_scaling};
  chain.augment_config.seed = 4;
  const auto out = fit_chain(chain, splits);
  CHECK(out.train.size() == 10 * splits.train.size());
  CHECK(out.validation.size() == 10 * splits.validation.size());
  CHECK(out.test.size() == splits.test.size());
  CHECK(chain.augment_train_std == doctest::Approx(global_std(splits.train)).epsilon(1e-15));
  REQUIRE(chain.emsc.has_value());
  REQUIRE(chain.scaler.has_value());
  // The test subset goes through the same non-augmenting steps.
  const auto again = apply_chain(chain, splits.test);
  CHECK(again.absorbance == out.test.absorbance);
  CHECK(std::abs(global_mean(out.train)) < 1e-10);
}

TEST_CASE("chain JSON round-trips the fitted state exactly") {
  const auto set = synthetic(120, 30);
  const auto splits = standard_split(set, 0.2, 0.2, 3);
  PreprocessChain chain;
  chain.steps = {PreprocessStep::emsc, PreprocessStep::global_scaling};
  fit_chain(chain, splits);
  const auto back = chain_from_json(chain_to_json(chain));
  CHECK(back.steps == chain.steps);
  const auto a = apply_chain(chain, splits.test);
  const auto b = apply_chain(back, splits.test);
  CHECK(a.absorbance == b.absorbance);

  PreprocessChain gs;
  gs.steps = {PreprocessStep::global_scaling};
  fit_chain(gs, splits);
  const std::string text = chain_to_json(gs);
  CHECK(text.find("reference") == std::string::npos);
  CHECK(text.find("train_std") == std::string::npos);
  CHECK(text.find("\"mean\"") != std::string::npos);
}
