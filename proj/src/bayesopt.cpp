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
#include <fstream>
#include <limits>

#include "json.hpp"
#include "nirchem/error.hpp"
#include "nirchem/hyperopt.hpp"
#include "nirchem/rng.hpp"
#include "text.hpp"

namespace nirchem {

namespace {

constexpr std::uint64_t kRandomStream = 0x1a17;
constexpr std::uint64_t kProposalStream = 0xb0;
constexpr std::uint64_t kGpStream = 0x6b;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// First primes, one Halton base per dimension.
constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71};

double radical_inverse(std::uint64_t index, int base) {
  double result = 0.0;
  double f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % static_cast<std::uint64_t>(base));
    index /= static_cast<std::uint64_t>(base);
    f /= base;
  }
  return result;
}

std::vector<double> random_point(const SearchSpace& space, Rng& rng) {
  std::vector<double> p(space.size());
  for (std::size_t k = 0; k < space.size(); ++k) {
    const auto& dim = space.dims[k];
    if (dim.kind == Dimension::Kind::integer) {
      const auto count = static_cast<std::size_t>(dim.high - dim.low) + 1;
      p[k] = dim.low + static_cast<double>(rng.index(count));
    } else {
      p[k] = rng.uniform(dim.low, dim.high);
    }
  }
  return p;
}

bool already_evaluated(const std::vector<Trial>& trace, const std::vector<double>& p) {
  return std::any_of(trace.begin(), trace.end(), [&](const Trial& t) { return t.params == p; });
}

// A random point not yet in the trace; gives up after a bounded number of
// draws (tiny integer spaces) and returns the last draw.
std::vector<double> fresh_random_point(const SearchSpace& space, const std::vector<Trial>& trace, Rng& rng) {
  std::vector<double> p;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    p = random_point(space, rng);
    if (!already_evaluated(trace, p)) break;
  }
  return p;
}

double worst_so_far(const std::vector<Trial>& trace) {
  double worst = kNaN;
  for (const auto& t : trace) {
    if (std::isfinite(t.objective) && !(t.objective <= worst)) worst = t.objective;
  }
  return worst;
}

Trial evaluate(const Objective& objective, std::vector<double> params, const std::vector<Trial>& trace) {
  Trial trial;
  trial.params = std::move(params);
  double value = kNaN;
  try {
    value = objective(trial.params);
  } catch (const Error&) {
    value = kNaN;
  }
  if (std::isfinite(value)) {
    trial.objective = value;
    trial.status = Trial::Status::ok;
  } else {
    trial.objective = worst_so_far(trace);
    trial.status = Trial::Status::failed;
  }
  return trial;
}

// Compass search maximizing `f` inside the box.
std::vector<double> compass_maximize(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                     double fx, const std::vector<double>& lo, const std::vector<double>& hi) {
  const std::size_t d = x.size();
  std::vector<double> step(d);
  for (std::size_t k = 0; k < d; ++k) step[k] = 0.1 * (hi[k] - lo[k]);
  int evals = 0;
  constexpr int kMaxEvals = 200;
  while (evals < kMaxEvals) {
    bool improved = false;
    for (std::size_t k = 0; k < d && evals < kMaxEvals; ++k) {
      for (const double sign : {1.0, -1.0}) {
        auto y = x;
        y[k] = std::clamp(y[k] + sign * step[k], lo[k], hi[k]);
        if (y[k] == x[k]) continue;
        const double fy = f(y);
        ++evals;
        if (fy > fx) {
          x = std::move(y);
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      bool small = true;
      for (std::size_t k = 0; k < d; ++k) {
        step[k] *= 0.5;
        if (step[k] > 1e-3 * (hi[k] - lo[k])) small = false;
      }
      if (small) break;
    }
  }
  return x;
}

std::vector<double> propose(const SearchSpace& space, const std::vector<Trial>& trace, const OptimizeOptions& options,
                            std::size_t iteration) {
  Rng rng = Rng::substream(options.seed, kProposalStream, iteration);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (std::isfinite(trace[i].objective)) rows.push_back(i);
  }
  const std::size_t d = space.size();
  const auto lo = space.lower();
  const auto hi = space.upper();

  std::optional<GpModel> model;
  double best = std::numeric_limits<double>::infinity();
  if (rows.size() >= 2) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t k = 0; k < d; ++k) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = trace[rows[r]].params[k];
      y[static_cast<Eigen::Index>(r)] = trace[rows[r]].objective;
      best = std::min(best, trace[rows[r]].objective);
    }
    GpFitOptions gp = options.gp;
    gp.seed = mix_seed(options.seed, kGpStream, iteration);
    try {
      model = gp_fit(x, y, lo, hi, gp);
    } catch (const Error&) {
      model.reset();
    }
  }
  if (!model) return fresh_random_point(space, trace, rng);

  const auto acquisition = [&](const std::vector<double>& p) { return expected_improvement(*model, p, best); };

  // Quasi-random candidates: Halton sequence with a random shift.
  std::vector<double> shift(d);
  for (auto& s : shift) s = rng.uniform();
  const int n_candidates = std::max(1, options.candidates);
  std::vector<std::pair<double, std::vector<double>>> scored;
  scored.reserve(static_cast<std::size_t>(n_candidates));
  for (int c = 0; c < n_candidates; ++c) {
    std::vector<double> p(d);
    for (std::size_t k = 0; k < d; ++k) {
      double u = radical_inverse(static_cast<std::uint64_t>(c) + 1, kPrimes[k % std::size(kPrimes)]) + shift[k];
      u -= std::floor(u);
      p[k] = lo[k] + u * (hi[k] - lo[k]);
    }
    scored.emplace_back(acquisition(p), std::move(p));
  }
  const std::size_t starts = std::min(scored.size(), static_cast<std::size_t>(std::max(0, options.refine_starts)));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(starts, 1)),
                    scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double best_ei = scored.front().first;
  std::vector<double> best_point = scored.front().second;
  for (std::size_t s = 0; s < starts; ++s) {
    auto refined = compass_maximize(acquisition, scored[s].second, scored[s].first, lo, hi);
    const double ei = acquisition(refined);
    if (ei > best_ei) {
      best_ei = ei;
      best_point = std::move(refined);
    }
  }
  auto snapped = space.snap(best_point);
  if (already_evaluated(trace, snapped)) return fresh_random_point(space, trace, rng);
  return snapped;
}

void append_trace(const std::optional<std::filesystem::path>& path, const Trial& trial, std::size_t index) {
  if (!path) return;
  std::ofstream out(*path, std::ios::app);
  if (!out) throw Error("cannot write " + path->string());
  out << trial_to_json(trial, index) << '\n';
  if (!out) throw Error("write failed for " + path->string());
}

}  // namespace

void SearchSpace::validate() const {
  if (dims.empty()) throw Error("search space: no dimensions");
  for (const auto& dim : dims) {
    if (!(dim.low < dim.high)) throw Error("search space: dimension " + dim.name + " needs low < high");
    if (dim.kind == Dimension::Kind::integer && (dim.low != std::floor(dim.low) || dim.high != std::floor(dim.high))) {
      throw Error("search space: integer dimension " + dim.name + " has non-integer bounds");
    }
  }
}

std::vector<double> SearchSpace::snap(std::span<const double> point) const {
  if (point.size() != dims.size()) throw Error("search space: point has the wrong dimension");
  std::vector<double> out(point.begin(), point.end());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    out[k] = std::clamp(out[k], dims[k].low, dims[k].high);
    if (dims[k].kind == Dimension::Kind::integer) out[k] = std::round(out[k]);
  }
  return out;
}

bool SearchSpace::contains(std::span<const double> point) const {
  if (point.size() != dims.size()) return false;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (!(point[k] >= dims[k].low && point[k] <= dims[k].high)) return false;
    if (dims[k].kind == Dimension::Kind::integer && point[k] != std::round(point[k])) return false;
  }
  return true;
}

std::vector<double> SearchSpace::lower() const {
  std::vector<double> v;
  for (const auto& d : dims) v.push_back(d.low);
  return v;
}

std::vector<double> SearchSpace::upper() const {
  std::vector<double> v;
  for (const auto& d : dims) v.push_back(d.high);
  return v;
}

SearchSpace cnn_search_space() {
  using K = Dimension::Kind;
  return SearchSpace{{
      {"conv1_kernels", K::integer, 2, 40},
      {"conv1_filter_size", K::integer, 5, 150},
      {"conv2_kernels", K::integer, 2, 40},
      {"conv2_filter_size", K::integer, 5, 150},
      {"dropout", K::real, 0.0, 0.5},
      {"dense_units", K::integer, 4, 1000},
  }};
}

CnnSpec spec_from_point(std::span<const double> point, int input_len, double noise_std) {
  if (point.size() != 6) throw Error("spec_from_point: expected 6 coordinates");
  CnnSpec spec;
  spec.k1 = static_cast<int>(std::lround(point[0]));
  spec.f1 = static_cast<int>(std::lround(point[1]));
  spec.k2 = static_cast<int>(std::lround(point[2]));
  spec.f2 = static_cast<int>(std::lround(point[3]));
  spec.dropout_rate = point[4];
  spec.dense_units = static_cast<int>(std::lround(point[5]));
  spec.noise_std = noise_std;
  spec.input_len = input_len;
  return spec;
}

std::vector<double> point_from_spec(const CnnSpec& spec) {
  return {static_cast<double>(spec.k1), static_cast<double>(spec.f1), static_cast<double>(spec.k2),
          static_cast<double>(spec.f2), spec.dropout_rate, static_cast<double>(spec.dense_units)};
}

OptimizeResult optimize(const SearchSpace& space, const Objective& objective, const OptimizeOptions& options) {
  space.validate();
  if (options.n_init < 2) throw Error("optimize: n_init must be at least 2");
  if (options.n_iter < 0) throw Error("optimize: n_iter must be non-negative");

  OptimizeResult result;
  if (options.trace_path && std::filesystem::exists(*options.trace_path)) {
    result.trace = load_trace(*options.trace_path);
    for (const auto& t : result.trace) {
      if (!space.contains(t.params)) throw Error("optimize: trace " + options.trace_path->string() + " does not match the search space");
    }
  }
  const auto total = static_cast<std::size_t>(options.n_init + options.n_iter);
  for (std::size_t i = result.trace.size(); i < total; ++i) {
    std::vector<double> params;
    if (i < static_cast<std::size_t>(options.n_init)) {
      Rng rng = Rng::substream(options.seed, kRandomStream, i);
      params = fresh_random_point(space, result.trace, rng);
    } else {
      params = propose(space, result.trace, options, i);
    }
    Trial trial = evaluate(objective, std::move(params), result.trace);
    append_trace(options.trace_path, trial, i);
    result.trace.push_back(std::move(trial));
  }

  const Trial* best = nullptr;
  for (const auto& t : result.trace) {
    if (t.status == Trial::Status::ok && (best == nullptr || t.objective < best->objective)) best = &t;
  }
  if (best == nullptr) throw Error("optimize: every trial failed");
  result.best = *best;
  return result;
}

std::vector<double> best_so_far(const std::vector<Trial>& trace) {
  std::vector<double> out;
  double best = kNaN;
  for (const auto& t : trace) {
    if (t.status == Trial::Status::ok && !(t.objective >= best)) best = t.objective;
    out.push_back(best);
  }
  return out;
}

std::string trial_to_json(const Trial& trial, std::size_t index) {
  nlohmann::json j;
  j["index"] = index;
  j["params"] = trial.params;
  j["objective"] = std::isfinite(trial.objective) ? nlohmann::json(trial.objective) : nlohmann::json(nullptr);
  j["status"] = trial.status == Trial::Status::ok ? "ok" : "failed";
  return j.dump();
}

Trial trial_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    Trial t;
    t.params = j.at("params").get<std::vector<double>>();
    t.objective = j.at("objective").is_null() ? kNaN : j.at("objective").get<double>();
    const auto status = j.at("status").get<std::string>();
    if (status == "ok") {
      t.status = Trial::Status::ok;
    } else if (status == "failed") {
      t.status = Trial::Status::failed;
    } else {
      throw Error("unknown trial status \"" + status + "\"");
    }
    if (t.status == Trial::Status::ok && !std::isfinite(t.objective)) throw Error("ok trial without a finite objective");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("trial: ") + e.what());
  }
}

std::vector<Trial> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Trial> trace;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (detail::trim(line).empty()) continue;
    try {
      trace.push_back(trial_from_json(line));
    } catch (const Error& e) {
      throw Error(path.string() + " line " + std::to_string(number) + ": " + e.what());
    }
  }
  return trace;
}

void write_convergence_csv(const std::vector<Trial>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iteration,objective,best,status\n";
  const auto best = best_so_far(trace);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i + 1 << ',' << detail::format_report(trace[i].objective) << ',' << detail::format_report(best[i]) << ','
        << (trace[i].status == Trial::Status::ok ? "ok" : "failed") << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace nirchem
