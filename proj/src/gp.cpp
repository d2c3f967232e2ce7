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


#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Cholesky>

#include "nirchem/error.hpp"
#include "nirchem/hyperopt.hpp"
#include "nirchem/rng.hpp"

namespace nirchem {

namespace {

constexpr double kInitialJitter = 1e-10;
constexpr double kMaxJitter = 1e-4;

double matern52(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

double scaled_distance(const double* a, const double* b, std::size_t d, const std::vector<double>& ls) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double z = (a[k] - b[k]) / ls[k];
    r2 += z * z;
  }
  return std::sqrt(r2);
}

// Data prepared for fitting: unit-cube inputs with duplicates merged.
struct GpData {
  std::vector<double> lower, upper;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  double y_mean = 0.0;
  double y_scale = 1.0;
};

GpData prepare(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> lower,
               std::span<const double> upper) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (x.rows() != y.size()) throw Error("gp_fit: X and y row counts differ");
  if (lower.size() != d || upper.size() != d) throw Error("gp_fit: bounds do not match the input dimension");
  for (std::size_t k = 0; k < d; ++k) {
    if (!(lower[k] < upper[k])) throw Error("gp_fit: every bound needs low < high");
  }
  if (!y.allFinite() || !x.allFinite()) throw Error("gp_fit: non-finite observation");

  GpData data;
  data.lower.assign(lower.begin(), lower.end());
  data.upper.assign(upper.begin(), upper.end());
  // Merge identical rows, keeping first-seen order.
  std::map<std::vector<double>, std::size_t> index;
  std::vector<std::vector<double>> rows;
  std::vector<double> sums;
  std::vector<int> counts;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> row(d);
    for (std::size_t k = 0; k < d; ++k) {
      row[k] = (x(i, static_cast<Eigen::Index>(k)) - lower[k]) / (upper[k] - lower[k]);
    }
    const auto [it, inserted] = index.emplace(row, rows.size());
    if (inserted) {
      rows.push_back(row);
      sums.push_back(y[i]);
      counts.push_back(1);
    } else {
      sums[it->second] += y[i];
      counts[it->second] += 1;
    }
  }
  if (rows.size() < 2) throw Error("gp_fit: at least two distinct observations required");
  const auto t = static_cast<Eigen::Index>(rows.size());
  data.x.resize(t, static_cast<Eigen::Index>(d));
  Eigen::VectorXd raw(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (std::size_t k = 0; k < d; ++k) data.x(i, static_cast<Eigen::Index>(k)) = rows[static_cast<std::size_t>(i)][k];
    raw[i] = sums[static_cast<std::size_t>(i)] / counts[static_cast<std::size_t>(i)];
  }
  data.y_mean = raw.mean();
  const double sd = std::sqrt((raw.array() - data.y_mean).square().mean());
  // A constant response carries no evidence of variation; shrink the output
  // scale so the posterior spread (and expected improvement) vanishes.
  data.y_scale = sd > 0.0 ? sd : 1e-12 * std::max(1.0, std::abs(data.y_mean));
  data.y = (raw.array() - data.y_mean) / data.y_scale;
  return data;
}

// Squared coordinate differences of every point pair (i > j), one column per
// dimension; fixed for a data set, so hyperparameter search reuses them.
struct PairTable {
  Eigen::Index points = 0;
  Eigen::ArrayXXd sq;
};

PairTable pair_table(const Eigen::MatrixXd& x) {
  PairTable p;
  p.points = x.rows();
  const Eigen::Index pairs = p.points * (p.points - 1) / 2;
  p.sq.resize(pairs, x.cols());
  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j < p.points; ++j) {
    for (Eigen::Index i = j + 1; i < p.points; ++i, ++row) {
      p.sq.row(row) = (x.row(i) - x.row(j)).array().square();
    }
  }
  return p;
}

// Lower triangle only; the Cholesky factorization never reads the upper part.
Eigen::MatrixXd kernel_matrix(const PairTable& pairs, const GpHyper& h) {
  Eigen::ArrayXd r2 = Eigen::ArrayXd::Zero(pairs.sq.rows());
  for (Eigen::Index k = 0; k < pairs.sq.cols(); ++k) {
    const double ls = h.lengthscales[static_cast<std::size_t>(k)];
    r2 += pairs.sq.col(k) / (ls * ls);
  }
  const Eigen::ArrayXd s = (5.0 * r2).sqrt();
  const Eigen::ArrayXd v = h.signal_var * (1.0 + s + s.square() / 3.0) * (-s).exp();
  const Eigen::Index t = pairs.points;
  Eigen::MatrixXd k(t, t);
  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j < t; ++j) {
    k(j, j) = h.signal_var;
    const Eigen::Index len = t - j - 1;
    k.col(j).tail(len) = v.segment(row, len).matrix();
    row += len;
  }
  return k;
}

// Fills jitter/alpha/log_likelihood (and chol when `keep_factor`); false if
// even the largest jitter fails.
bool factorize(GpModel& m, const PairTable& pairs, bool keep_factor = true) {
  const Eigen::MatrixXd k = kernel_matrix(pairs, m.hyper);
  const Eigen::Index t = k.rows();
  Eigen::MatrixXd kn(t, t);
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (double jitter = kInitialJitter; jitter <= kMaxJitter * 1.0000001; jitter *= 10.0) {
    kn.triangularView<Eigen::Lower>() = k;
    kn.diagonal().array() += m.hyper.noise_var + jitter;
    llt.compute(kn);
    if (llt.info() != Eigen::Success) continue;
    const auto diag = llt.matrixLLT().diagonal();
    if (!(diag.array() > 0.0).all()) continue;
    m.jitter = jitter;
    m.alpha = llt.solve(m.y);
    m.log_likelihood = -0.5 * m.y.dot(m.alpha) - diag.array().log().sum() -
                       0.5 * static_cast<double>(t) * std::log(2.0 * std::numbers::pi);
    if (keep_factor) m.chol = llt.matrixL();
    return true;
  }
  return false;
}

GpModel model_from(const GpData& data, const GpHyper& hyper) {
  GpModel m;
  m.lower = data.lower;
  m.upper = data.upper;
  m.x = data.x;
  m.y = data.y;
  m.y_mean = data.y_mean;
  m.y_scale = data.y_scale;
  m.hyper = hyper;
  return m;
}

// Bounded Nelder-Mead on a box; points are clamped into the box.
std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> start,
                                const std::vector<double>& lo, const std::vector<double>& hi, int max_evals) {
  const std::size_t n = start.size();
  const auto clamp = [&](std::vector<double> p) {
    for (std::size_t k = 0; k < n; ++k) p[k] = std::clamp(p[k], lo[k], hi[k]);
    return p;
  };
  std::vector<std::vector<double>> simplex{clamp(start)};
  for (std::size_t k = 0; k < n; ++k) {
    auto p = simplex[0];
    const double step = 0.1 * (hi[k] - lo[k]);
    p[k] = p[k] + step <= hi[k] ? p[k] + step : p[k] - step;
    simplex.push_back(clamp(p));
  }
  std::vector<double> values;
  for (const auto& p : simplex) values.push_back(f(p));
  int evals = static_cast<int>(values.size());

  std::vector<std::size_t> order(n + 1);
  while (evals < max_evals) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order[0];
    const std::size_t worst = order[n];
    const std::size_t second = order[n - 1];
    if (std::abs(values[worst] - values[best]) <= 1e-8 * (1.0 + std::abs(values[best]))) break;
    // Collapsed simplex: in log space 1e-3 is a 0.1% change of every hyperparameter.
    double size = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t k = 0; k < n; ++k) size = std::max(size, std::abs(simplex[i][k] - simplex[best][k]));
    }
    if (size <= 1e-3) break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / static_cast<double>(n);
    }
    const auto along = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + coef * (simplex[worst][k] - centroid[k]);
      return clamp(p);
    };
    const auto reflected = along(-1.0);
    const double fr = f(reflected);
    ++evals;
    if (fr < values[best]) {
      const auto expanded = along(-2.0);
      const double fe = f(expanded);
      ++evals;
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
    } else if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
    } else {
      const auto contracted = fr < values[worst] ? along(-0.5) : along(0.5);
      const double fc = f(contracted);
      ++evals;
      if (fc < std::min(fr, values[worst])) {
        simplex[worst] = contracted;
        values[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < n; ++k) simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
          values[i] = f(simplex[i]);
          ++evals;
        }
      }
    }
  }
  const auto it = std::min_element(values.begin(), values.end());
  return simplex[static_cast<std::size_t>(it - values.begin())];
}

}  // namespace

GpModel gp_fit_fixed(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> lower,
                     std::span<const double> upper, const GpHyper& hyper) {
  const GpData data = prepare(x, y, lower, upper);
  if (hyper.lengthscales.size() != static_cast<std::size_t>(x.cols())) throw Error("gp_fit: one length-scale per dimension required");
  GpModel m = model_from(data, hyper);
  if (!factorize(m, pair_table(m.x))) throw Error("gp_fit: kernel matrix not positive definite even with maximum jitter");
  return m;
}

GpModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> lower,
               std::span<const double> upper, const GpFitOptions& options) {
  const GpData data = prepare(x, y, lower, upper);
  const auto d = static_cast<std::size_t>(x.cols());
  // Optimize in log space: [log l_1..l_d, log signal, log noise].
  std::vector<double> lo(d + 2);
  std::vector<double> hi(d + 2);
  for (std::size_t k = 0; k < d; ++k) {
    lo[k] = std::log(options.min_lengthscale);
    hi[k] = std::log(options.max_lengthscale);
  }
  lo[d] = std::log(options.min_signal_var);
  hi[d] = std::log(options.max_signal_var);
  lo[d + 1] = std::log(options.min_noise_var);
  hi[d + 1] = std::log(options.max_noise_var);

  const auto to_hyper = [&](const std::vector<double>& theta) {
    GpHyper h;
    for (std::size_t k = 0; k < d; ++k) h.lengthscales.push_back(std::exp(theta[k]));
    h.signal_var = std::exp(theta[d]);
    h.noise_var = std::exp(theta[d + 1]);
    return h;
  };
  GpModel scratch = model_from(data, GpHyper{});
  const PairTable pairs = pair_table(data.x);
  const auto negative_lml = [&](const std::vector<double>& theta) {
    scratch.hyper = to_hyper(theta);
    if (!factorize(scratch, pairs, false)) return std::numeric_limits<double>::infinity();
    return -scratch.log_likelihood;
  };

  const int max_evals = 40 * static_cast<int>(d + 3);
  std::vector<double> best_theta;
  double best_value = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    std::vector<double> start(d + 2);
    if (r == 0) {
      for (std::size_t k = 0; k < d; ++k) start[k] = std::log(0.3);
      start[d] = 0.0;
      start[d + 1] = std::log(1e-4);
    } else {
      Rng rng = Rng::substream(options.seed, 0x69f, static_cast<std::uint64_t>(r));
      for (std::size_t k = 0; k < d + 2; ++k) start[k] = rng.uniform(lo[k], hi[k]);
    }
    const auto theta = nelder_mead(negative_lml, start, lo, hi, max_evals);
    const double value = negative_lml(theta);
    if (value < best_value) {
      best_value = value;
      best_theta = theta;
    }
  }
  if (!std::isfinite(best_value)) throw Error("gp_fit: kernel matrix not positive definite even with maximum jitter");
  GpModel m = model_from(data, to_hyper(best_theta));
  factorize(m, pairs);
  return m;
}

Posterior gp_posterior(const GpModel& model, std::span<const double> x) {
  const auto d = model.lower.size();
  if (x.size() != d) throw Error("gp_posterior: point has the wrong dimension");
  std::vector<double> u(d);
  for (std::size_t k = 0; k < d; ++k) u[k] = (x[k] - model.lower[k]) / (model.upper[k] - model.lower[k]);
  const Eigen::Index t = model.x.rows();
  Eigen::VectorXd kstar(t);
  std::vector<double> row(d);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (std::size_t k = 0; k < d; ++k) row[k] = model.x(i, static_cast<Eigen::Index>(k));
    kstar[i] = model.hyper.signal_var * matern52(scaled_distance(row.data(), u.data(), d, model.hyper.lengthscales));
  }
  const double mean_std = kstar.dot(model.alpha);
  const Eigen::VectorXd v = model.chol.triangularView<Eigen::Lower>().solve(kstar);
  const double var_std = std::max(0.0, model.hyper.signal_var - v.squaredNorm());
  return {model.y_mean + model.y_scale * mean_std, model.y_scale * model.y_scale * var_std};
}

double expected_improvement(double mean, double sigma, double best) {
  const double gain = best - mean;
  if (!(sigma > 0.0)) return std::max(0.0, gain);
  const double z = gain / sigma;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

double expected_improvement(const GpModel& model, std::span<const double> x, double best) {
  const Posterior p = gp_posterior(model, x);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

}  // namespace nirchem
