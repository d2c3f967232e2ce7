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


#include "nirchem/pls.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/LU>

#include "json.hpp"
#include "nirchem/error.hpp"
#include "nirchem/loss.hpp"
#include "nirchem/rng.hpp"
#include "text.hpp"

namespace nirchem {

namespace {

// Relative size of X^T y below which the response is considered exhausted.
constexpr double kExhaustedTolerance = 1e-12;

double loss_of(const Vector& y, const Vector& pred, double delta) {
  const Vector r = pred - y;
  return huber(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())), delta);
}

void assemble_coefficients(PlsModel& model) {
  const Eigen::MatrixXd ptw = model.loadings.transpose() * model.weights;
  model.coefficients = model.weights * ptw.partialPivLu().solve(model.y_loadings);
}

// Extracts up to `components` components. With `strict` an exhausted response
// is an error; otherwise extraction stops early.
PlsModel nipals(const Matrix& x, const Vector& y, int components, const NipalsOptions& options, bool strict) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (y.size() != n) throw Error("pls_fit: X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
  if (components < 1) throw Error("pls_fit: at least one component required");
  if (components > std::min<Eigen::Index>(n - 1, p)) {
    throw Error("pls_fit: " + std::to_string(components) + " components exceed min(n - 1, p) = " +
                std::to_string(std::min<Eigen::Index>(n - 1, p)));
  }
  if (!(options.tol > 0.0) || options.max_iter < 1) throw Error("pls_fit: tolerance and iteration limit must be positive");

  PlsModel model;
  model.x_mean = x.colwise().mean().transpose();
  model.y_mean = y.mean();
  Eigen::MatrixXd xr = x.rowwise() - model.x_mean.transpose();
  Vector yr = y.array() - model.y_mean;
  if (yr.norm() == 0.0 || !std::isfinite(yr.norm())) throw Error("pls_fit: response has zero variance");

  model.weights.resize(p, components);
  model.loadings.resize(p, components);
  model.y_loadings.resize(components);
  const double initial_cov = (xr.transpose() * yr).norm();

  int extracted = 0;
  for (int a = 0; a < components; ++a) {
    Vector w_old = Vector::Zero(p);
    Vector w;
    Vector t;
    Vector u = yr;
    double q = 0.0;
    double last_change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < options.max_iter; ++it) {
      w = xr.transpose() * u;
      const double norm = w.norm();
      if (!(norm > kExhaustedTolerance * initial_cov * (u.norm() / yr.norm()))) {
        if (strict) throw Error("pls_fit: weight vector of component " + std::to_string(a + 1) + " is numerically zero");
        w.resize(0);
        break;
      }
      w /= norm;
      t = xr * w;
      q = yr.dot(t) / t.squaredNorm();
      u = yr / q;
      const double change = (w - w_old).norm();
      w_old = w;
      // A single response converges after one pass; the second pass only
      // sees rounding noise, so stop once the change stops shrinking.
      if (change < options.tol || change >= last_change) break;
      last_change = change;
    }
    if (w.size() == 0) break;
    const double tt = t.squaredNorm();
    const Vector loading = xr.transpose() * t / tt;
    model.weights.col(a) = w;
    model.loadings.col(a) = loading;
    model.y_loadings[a] = q;
    xr -= t * loading.transpose();
    yr -= q * t;
    ++extracted;
  }
  if (extracted == 0) throw Error("pls_fit: weight vector of component 1 is numerically zero");
  model.n_components = extracted;
  model.weights.conservativeResize(p, extracted);
  model.loadings.conservativeResize(p, extracted);
  model.y_loadings.conservativeResize(extracted);
  assemble_coefficients(model);
  return model;
}

}  // namespace

PlsModel pls_fit(const Matrix& x, const Vector& y, int components, const NipalsOptions& options) {
  return nipals(x, y, components, options, true);
}

Vector pls_predict(const PlsModel& model, const Matrix& x) {
  if (x.cols() != model.x_mean.size()) {
    throw Error("pls_predict: expected " + std::to_string(model.x_mean.size()) + " columns, got " +
                std::to_string(x.cols()));
  }
  if (x.rows() == 0) return Vector(0);
  return ((x.rowwise() - model.x_mean.transpose()) * model.coefficients).array() + model.y_mean;
}

Eigen::MatrixXd pls_scores(const PlsModel& model, const Matrix& x) {
  if (x.cols() != model.x_mean.size()) throw Error("pls_scores: column count mismatch");
  Eigen::MatrixXd xr = x.rowwise() - model.x_mean.transpose();
  Eigen::MatrixXd scores(x.rows(), model.n_components);
  for (int a = 0; a < model.n_components; ++a) {
    scores.col(a) = xr * model.weights.col(a);
    xr -= scores.col(a) * model.loadings.col(a).transpose();
  }
  return scores;
}

Vector pls_predict_deflation(const PlsModel& model, const Matrix& x) {
  return (pls_scores(model, x) * model.y_loadings).array() + model.y_mean;
}

PlsModel pls_truncate(const PlsModel& model, int components) {
  if (components < 1 || components > model.n_components) throw Error("pls_truncate: component count out of range");
  PlsModel out;
  out.x_mean = model.x_mean;
  out.y_mean = model.y_mean;
  out.weights = model.weights.leftCols(components);
  out.loadings = model.loadings.leftCols(components);
  out.y_loadings = model.y_loadings.head(components);
  out.n_components = components;
  assemble_coefficients(out);
  return out;
}

namespace {

// Loss of `model` truncated to each count in `range` (clamped to what the
// model holds).
std::vector<double> losses_over_range(const PlsModel& model, const ComponentRange& range, const Matrix& x,
                                      const Vector& y, double delta) {
  std::vector<double> losses;
  for (int a = range.low; a <= range.high; ++a) {
    const PlsModel m = pls_truncate(model, std::min(a, model.n_components));
    losses.push_back(loss_of(y, pls_predict(m, x), delta));
  }
  return losses;
}

void check_range(const ComponentRange& range) {
  if (range.low < 1 || range.high < range.low) throw Error("component range must satisfy 1 <= low <= high");
}

}  // namespace

CvCurve cross_validate(const Matrix& x, const Vector& y, const CvOptions& options, std::optional<Holdout> holdout) {
  check_range(options.range);
  const auto n = static_cast<std::size_t>(x.rows());
  if (options.folds < 2) throw Error("cross_validate: at least two folds required");
  if (static_cast<std::size_t>(options.folds) > n) {
    throw Error("cross_validate: " + std::to_string(options.folds) + " folds leave a fold with no samples (n = " +
                std::to_string(n) + ")");
  }
  const auto folds = static_cast<std::size_t>(options.folds);
  const auto range_size = static_cast<std::size_t>(options.range.high - options.range.low + 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  rng.shuffle(std::span(order));
  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[order[i]] = i % folds;

  CvCurve curve;
  for (int a = options.range.low; a <= options.range.high; ++a) curve.components.push_back(a);
  curve.cv_loss.assign(range_size, 0.0);

  const auto max_components = [&](Eigen::Index rows) {
    return static_cast<int>(std::min<Eigen::Index>({options.range.high, rows - 1, x.cols()}));
  };

  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_rows;
    std::vector<Eigen::Index> test_rows;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
    const Matrix xt = x(train_rows, Eigen::all);
    const Vector yt = y(train_rows);
    const Matrix xv = x(test_rows, Eigen::all);
    const Vector yv = y(test_rows);
    const PlsModel model = nipals(xt, yt, max_components(xt.rows()), options.nipals, false);
    const auto losses = losses_over_range(model, options.range, xv, yv, options.huber_delta);
    for (std::size_t k = 0; k < range_size; ++k) curve.cv_loss[k] += losses[k] / static_cast<double>(folds);
  }

  const PlsModel full = nipals(x, y, max_components(x.rows()), options.nipals, false);
  curve.train_loss = losses_over_range(full, options.range, x, y, options.huber_delta);
  for (std::size_t k = 0; k < range_size; ++k) {
    curve.corrected_cv_loss.push_back(curve.cv_loss[k] + std::abs(curve.cv_loss[k] - curve.train_loss[k]));
  }
  if (holdout) {
    if (holdout->x.cols() != x.cols()) throw Error("cross_validate: holdout column count mismatch");
    curve.holdout_loss = losses_over_range(full, options.range, holdout->x, holdout->y, options.huber_delta);
  }
  return curve;
}

OutlierResult remove_outliers(const SpectraSet& set, double sigma_mult, const CvOptions& options) {
  if (!(sigma_mult > 0.0)) throw Error("remove_outliers: sigma multiplier must be positive");
  const Matrix& x = set.absorbance;
  const Vector y = as_vector(set.reference_mg);
  const CvCurve curve = cross_validate(x, y, options);
  OutlierResult result;
  result.components = choose_components(curve, ComponentStrategy::cv);

  const int max_a = static_cast<int>(std::min<Eigen::Index>(x.rows() - 1, x.cols()));
  const PlsModel model = nipals(x, y, std::min(result.components, max_a), options.nipals, false);
  const Vector errors = (pls_predict(model, x) - y).cwiseAbs();
  const double mean = errors.mean();
  const double sd = std::sqrt((errors.array() - mean).square().mean());
  const double y_sd = std::sqrt((y.array() - y.mean()).square().mean());
  result.threshold = sigma_mult * sd;
  const double floor = 1e-9 * y_sd;

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double e = errors[static_cast<Eigen::Index>(i)];
    result.abs_errors.push_back(e);
    if (e > result.threshold && e > floor) {
      result.removed.push_back(set.sample_id[i]);
    } else {
      keep.push_back(i);
    }
  }
  if (keep.empty()) throw Error("remove_outliers: every sample was flagged as an outlier");
  result.kept = set.subset(keep);
  return result;
}

ComponentStrategy parse_strategy(const std::string& name) {
  if (name == "holdout_optimal") return ComponentStrategy::holdout_optimal;
  if (name == "cv") return ComponentStrategy::cv;
  if (name == "corrected_cv") return ComponentStrategy::corrected_cv;
  throw Error("unknown component strategy '" + name + "' (expected holdout_optimal, cv or corrected_cv)");
}

std::string strategy_name(ComponentStrategy strategy) {
  switch (strategy) {
    case ComponentStrategy::holdout_optimal: return "holdout_optimal";
    case ComponentStrategy::cv: return "cv";
    case ComponentStrategy::corrected_cv: return "corrected_cv";
  }
  return "?";
}

int choose_components(const CvCurve& curve, ComponentStrategy strategy) {
  const std::vector<double>* losses = nullptr;
  switch (strategy) {
    case ComponentStrategy::holdout_optimal: losses = &curve.holdout_loss; break;
    case ComponentStrategy::cv: losses = &curve.cv_loss; break;
    case ComponentStrategy::corrected_cv: losses = &curve.corrected_cv_loss; break;
  }
  if (losses->empty() || losses->size() != curve.components.size()) {
    throw Error("choose_components: curve for strategy '" + strategy_name(strategy) + "' is missing");
  }
  // Strict comparison keeps the first (smallest) count on ties.
  std::size_t best = 0;
  for (std::size_t k = 1; k < losses->size(); ++k) {
    if ((*losses)[k] < (*losses)[best]) best = k;
  }
  return curve.components[best];
}

ComponentSelection select_components(const SpectraSet& train, const SpectraSet& holdout, ComponentStrategy strategy,
                                     const CvOptions& options) {
  if (strategy == ComponentStrategy::holdout_optimal && holdout.size() == 0) {
    throw Error("select_components: holdout_optimal requires a non-empty holdout set");
  }
  const Vector y = as_vector(train.reference_mg);
  const Vector yh = as_vector(holdout.reference_mg);
  ComponentSelection out;
  out.curve = cross_validate(train.absorbance, y, options,
                             holdout.size() > 0 ? std::optional<Holdout>(Holdout{holdout.absorbance, yh}) : std::nullopt);
  out.components = choose_components(out.curve, strategy);
  return out;
}

Matrix as_matrix(const SpectraSet& set) { return set.absorbance; }

Vector as_vector(const std::vector<double>& values) {
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

namespace {

std::vector<double> to_std(const Eigen::Ref<const Eigen::VectorXd>& v) { return {v.data(), v.data() + v.size()}; }

std::vector<std::vector<double>> columns_of(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> cols;
  for (Eigen::Index c = 0; c < m.cols(); ++c) cols.push_back(to_std(m.col(c)));
  return cols;
}

Eigen::MatrixXd from_columns(const std::vector<std::vector<double>>& cols, Eigen::Index rows) {
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (static_cast<Eigen::Index>(cols[c].size()) != rows) throw Error("PLS JSON: inconsistent column length");
    m.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Vector>(cols[c].data(), rows);
  }
  return m;
}

}  // namespace

std::string pls_to_json(const PlsModel& model) {
  nlohmann::json doc{
      {"n_components", model.n_components},
      {"x_mean", to_std(model.x_mean)},
      {"y_mean", model.y_mean},
      {"weights", columns_of(model.weights)},
      {"loadings", columns_of(model.loadings)},
      {"y_loadings", to_std(model.y_loadings)},
      {"coefficients", to_std(model.coefficients)},
  };
  return doc.dump();
}

PlsModel pls_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    PlsModel m;
    m.n_components = doc.at("n_components").get<int>();
    m.x_mean = as_vector(doc.at("x_mean").get<std::vector<double>>());
    m.y_mean = doc.at("y_mean").get<double>();
    m.weights = from_columns(doc.at("weights").get<std::vector<std::vector<double>>>(), m.x_mean.size());
    m.loadings = from_columns(doc.at("loadings").get<std::vector<std::vector<double>>>(), m.x_mean.size());
    m.y_loadings = as_vector(doc.at("y_loadings").get<std::vector<double>>());
    m.coefficients = as_vector(doc.at("coefficients").get<std::vector<double>>());
    if (m.weights.cols() != m.n_components || m.coefficients.size() != m.x_mean.size()) {
      throw Error("PLS JSON: shapes do not match n_components");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("PLS JSON: ") + e.what());
  }
}

void write_cv_curve_csv(const CvCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "components,train_loss,cv_loss,corrected_cv_loss,holdout_loss\n";
  for (std::size_t k = 0; k < curve.components.size(); ++k) {
    out << curve.components[k] << ',' << detail::format_report(curve.train_loss[k]) << ','
        << detail::format_report(curve.cv_loss[k]) << ',' << detail::format_report(curve.corrected_cv_loss[k]) << ','
        << (curve.holdout_loss.empty() ? std::string() : detail::format_report(curve.holdout_loss[k])) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace nirchem
