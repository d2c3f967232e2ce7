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
#include <numbers>
#include <vector>

#include "doctest.h"
#include "nirchem/error.hpp"
#include "nirchem/hyperopt.hpp"

using namespace nirchem;

namespace {

// Closed-form expected improvement for minimization, written out directly.
double ei_oracle(double mean, double sigma, double best) {
  if (sigma == 0.0) return std::max(0.0, best - mean);
  const double z = (best - mean) / sigma;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return (best - mean) * cdf + sigma * pdf;
}

Eigen::MatrixXd column(const std::vector<double>& v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const std::vector<double> kLow{0.0};
const std::vector<double> kHigh{10.0};

}  // namespace

TEST_CASE("expected improvement closed form") {
  CHECK(expected_improvement(0.0, 1.0, 0.0) == doctest::Approx(0.3989422804).epsilon(1e-9));
  CHECK(expected_improvement(1.0, 0.0, 3.0) == 2.0);
  CHECK(expected_improvement(3.0, 0.0, 1.0) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double mean = 3.0 * rng.normal();
    const double sigma = std::abs(2.0 * rng.normal());
    const double best = 3.0 * rng.normal();
    const double ei = expected_improvement(mean, sigma, best);
    CHECK(ei >= 0.0);
    CHECK(ei >= std::max(0.0, best - mean) - 1e-12);
    CHECK(ei == doctest::Approx(ei_oracle(mean, sigma, best)).epsilon(1e-9).scale(1e-12));
  }
}

TEST_CASE("noiseless GP interpolates its observations") {
  const std::vector<double> xs{0.5, 2.0, 3.5, 6.0, 9.0};
  std::vector<double> ys;
  for (const double x : xs) ys.push_back(std::sin(x));
  GpHyper h;
  h.lengthscales = {0.2};
  h.signal_var = 1.0;
  h.noise_var = 1e-10;
  const auto m = gp_fit_fixed(column(xs), vec(ys), kLow, kHigh, h);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::vector<double> p{xs[i]};
    const auto post = gp_posterior(m, p);
    CHECK(std::abs(post.mean - ys[i]) < 1e-6);
    CHECK(post.variance < 1e-8);
  }
}

TEST_CASE("far from data the posterior reverts to the prior") {
  const std::vector<double> xs{0.0, 0.2, 0.4};
  const std::vector<double> ys{1.0, 2.0, 4.0};
  GpHyper h;
  h.lengthscales = {0.01};
  h.signal_var = 2.0;
  h.noise_var = 1e-8;
  const auto m = gp_fit_fixed(column(xs), vec(ys), kLow, kHigh, h);
  const std::vector<double> far{9.0};
  const auto post = gp_posterior(m, far);
  CHECK(std::abs(post.mean - m.y_mean) < 1e-3);
  CHECK(std::abs(post.variance - h.signal_var * m.y_scale * m.y_scale) < 1e-3 * h.signal_var * m.y_scale * m.y_scale);
}

TEST_CASE("fitted GP tracks a smooth function") {
  std::vector<double> xs;
  std::vector<double> ys;
  for (int i = 0; i < 12; ++i) {
    xs.push_back(10.0 * (i + 0.5) / 12.0);
    ys.push_back(std::sin(xs.back()));
  }
  GpFitOptions opt;
  opt.seed = 3;
  const auto m = gp_fit(column(xs), vec(ys), kLow, kHigh, opt);
  double sq = 0.0;
  double var = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const double x = 0.5 + 9.0 * i / (n - 1.0);
    const std::vector<double> p{x};
    const double e = gp_posterior(m, p).mean - std::sin(x);
    sq += e * e;
    var += std::sin(x) * std::sin(x);
  }
  // Held-out error well below the spread of the function itself.
  CHECK(std::sqrt(sq / n) < 0.2 * std::sqrt(var / n));
}

TEST_CASE("constant responses give a flat, certain surrogate") {
  const std::vector<double> xs{1.0, 4.0, 7.0};
  const std::vector<double> ys{2.5, 2.5, 2.5};
  const auto m = gp_fit(column(xs), vec(ys), kLow, kHigh);
  for (const double x : {0.0, 2.0, 5.5, 10.0}) {
    const std::vector<double> p{x};
    const auto post = gp_posterior(m, p);
    CHECK(post.mean == doctest::Approx(2.5));
    CHECK(expected_improvement(m, p, 2.5) < 1e-9);
  }
}

TEST_CASE("two symmetric observations give a symmetric posterior") {
  const std::vector<double> xs{3.0, 7.0};
  const std::vector<double> ys{1.0, 1.0 + 1e-3};
  GpHyper h;
  h.lengthscales = {0.3};
  h.noise_var = 1e-6;
  const auto m = gp_fit_fixed(column(xs), vec(ys), kLow, kHigh, h);
  for (const double off : {0.5, 1.5, 2.5}) {
    const std::vector<double> a{3.0 - off};
    const std::vector<double> b{7.0 + off};
    CHECK(gp_posterior(m, a).variance == doctest::Approx(gp_posterior(m, b).variance).epsilon(1e-9));
  }
  const std::vector<double> mid{5.0};
  const auto pm = gp_posterior(m, mid);
  CHECK(pm.mean == doctest::Approx(m.y_mean).epsilon(1e-9));
}

TEST_CASE("duplicate rows are merged by averaging") {
  const std::vector<double> xs{1.0, 1.0, 6.0};
  const std::vector<double> ys{1.0, 3.0, 5.0};
  GpHyper h;
  h.lengthscales = {0.3};
  h.noise_var = 1e-10;
  const auto m = gp_fit_fixed(column(xs), vec(ys), kLow, kHigh, h);
  CHECK(m.x.rows() == 2);
  const std::vector<double> p{1.0};
  CHECK(gp_posterior(m, p).mean == doctest::Approx(2.0).epsilon(1e-6));
  CHECK_THROWS_AS(gp_fit_fixed(column({2.0, 2.0}), vec({1.0, 2.0}), kLow, kHigh, h), Error);
}

TEST_CASE("posterior does not depend on observation order") {
  Rng rng(5);
  const int t = 10;
  Eigen::MatrixXd x(t, 2);
  Eigen::VectorXd y(t);
  for (int i = 0; i < t; ++i) {
    x(i, 0) = rng.uniform(0.0, 4.0);
    x(i, 1) = rng.uniform(-1.0, 1.0);
    y[i] = x(i, 0) * x(i, 0) + std::cos(3.0 * x(i, 1));
  }
  std::vector<int> perm(t);
  for (int i = 0; i < t; ++i) perm[static_cast<std::size_t>(i)] = (i * 7 + 3) % t;
  Eigen::MatrixXd xp(t, 2);
  Eigen::VectorXd yp(t);
  for (int i = 0; i < t; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp[i] = y[perm[static_cast<std::size_t>(i)]];
  }
  const std::vector<double> lo{0.0, -1.0};
  const std::vector<double> hi{4.0, 1.0};
  GpHyper h;
  h.lengthscales = {0.4, 0.7};
  h.noise_var = 1e-6;
  const auto a = gp_fit_fixed(x, y, lo, hi, h);
  const auto b = gp_fit_fixed(xp, yp, lo, hi, h);
  const auto fa = gp_fit(x, y, lo, hi);
  const auto fb = gp_fit(xp, yp, lo, hi);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> p{rng.uniform(0.0, 4.0), rng.uniform(-1.0, 1.0)};
    const auto pa = gp_posterior(a, p);
    const auto pb = gp_posterior(b, p);
    CHECK(std::abs(pa.mean - pb.mean) <= 1e-10 * std::max(1.0, std::abs(pa.mean)));
    CHECK(std::abs(pa.variance - pb.variance) <= 1e-10 * std::max(1.0, pa.variance));
    const auto qa = gp_posterior(fa, p);
    const auto qb = gp_posterior(fb, p);
    CHECK(std::abs(qa.mean - qb.mean) <= 1e-6 * std::max(1.0, std::abs(qa.mean)));
  }
}

TEST_CASE("fitted hyperparameters respect their bounds") {
  Rng rng(8);
  Eigen::MatrixXd x(15, 3);
  Eigen::VectorXd y(15);
  for (int i = 0; i < 15; ++i) {
    for (int k = 0; k < 3; ++k) x(i, k) = rng.uniform();
    y[i] = x(i, 0) - 2.0 * x(i, 1) + 0.1 * rng.normal();
  }
  const std::vector<double> lo{0.0, 0.0, 0.0};
  const std::vector<double> hi{1.0, 1.0, 1.0};
  GpFitOptions opt;
  opt.seed = 2;
  const auto m = gp_fit(x, y, lo, hi, opt);
  for (const double l : m.hyper.lengthscales) {
    CHECK(l >= opt.min_lengthscale * (1 - 1e-12));
    CHECK(l <= opt.max_lengthscale * (1 + 1e-12));
  }
  CHECK(m.hyper.signal_var >= opt.min_signal_var * (1 - 1e-12));
  CHECK(m.hyper.signal_var <= opt.max_signal_var * (1 + 1e-12));
  CHECK(m.hyper.noise_var >= opt.min_noise_var * (1 - 1e-12));
  CHECK(m.hyper.noise_var <= opt.max_noise_var * (1 + 1e-12));
  CHECK(std::isfinite(m.log_likelihood));

  // The optimum is at least as likely as the default starting point.
  GpHyper start;
  start.lengthscales = {0.3, 0.3, 0.3};
  start.signal_var = 1.0;
  start.noise_var = 1e-4;
  CHECK(m.log_likelihood >= gp_fit_fixed(x, y, lo, hi, start).log_likelihood - 1e-9);

  const auto again = gp_fit(x, y, lo, hi, opt);
  CHECK(again.log_likelihood == m.log_likelihood);
}

TEST_CASE("gp_fit input validation") {
  const std::vector<double> bad_hi{0.0};
  CHECK_THROWS_AS(gp_fit(column({1.0, 2.0}), vec({1.0, 2.0}), kLow, bad_hi), Error);
  CHECK_THROWS_AS(gp_fit(column({1.0, 2.0}), vec({1.0}), kLow, kHigh), Error);
  CHECK_THROWS_AS(gp_fit(column({1.0, 2.0}), vec({1.0, std::nan("")}), kLow, kHigh), Error);
}
