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


#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nirchem/cnn.hpp"

namespace nirchem {

// ---------------------------------------------------------------------------
// Search space

struct Dimension {
  enum class Kind { integer, real };
  std::string name;
  Kind kind = Kind::real;
  double low = 0.0;
  double high = 1.0;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  std::size_t size() const { return dims.size(); }
  void validate() const;
  // Rounds integer dimensions and clamps every coordinate into bounds.
  std::vector<double> snap(std::span<const double> point) const;
  bool contains(std::span<const double> point) const;
  std::vector<double> lower() const;
  std::vector<double> upper() const;
};

// Kernel counts, filter sizes, dropout and dense width of the regressor.
SearchSpace cnn_search_space();
CnnSpec spec_from_point(std::span<const double> point, int input_len, double noise_std = 0.01);
std::vector<double> point_from_spec(const CnnSpec& spec);

// ---------------------------------------------------------------------------
// Gaussian-process surrogate (Matern 5/2, one length-scale per dimension)

struct GpHyper {
  std::vector<double> lengthscales;  // in unit-cube coordinates
  double signal_var = 1.0;
  double noise_var = 1e-6;
};

struct GpModel {
  std::vector<double> lower;
  std::vector<double> upper;
  Eigen::MatrixXd x;  // t x d, scaled to the unit cube
  Eigen::VectorXd y;  // standardized
  double y_mean = 0.0;
  double y_scale = 1.0;
  GpHyper hyper;
  double jitter = 0.0;
  Eigen::MatrixXd chol;   // lower Cholesky factor of K + (noise + jitter) I
  Eigen::VectorXd alpha;  // (K + ...)^-1 y
  double log_likelihood = 0.0;
};

struct GpFitOptions {
  int restarts = 8;
  std::uint64_t seed = 0;
  double min_lengthscale = 1e-2;
  double max_lengthscale = 10.0;
  double min_signal_var = 1e-2;
  double max_signal_var = 1e2;
  double min_noise_var = 1e-10;
  double max_noise_var = 1.0;
};

// Hyperparameters chosen by maximizing the log marginal likelihood from
// `restarts` deterministic starting points. Duplicate rows are merged by
// averaging their responses. Throws if the kernel matrix cannot be
// factorized with at most 1e-4 jitter.
GpModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> lower,
               std::span<const double> upper, const GpFitOptions& options = {});

// Same data handling with fixed hyperparameters.
GpModel gp_fit_fixed(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> lower,
                     std::span<const double> upper, const GpHyper& hyper);

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Posterior of the latent function at `x` (original units).
Posterior gp_posterior(const GpModel& model, std::span<const double> x);

// Expected improvement below `best` for a Gaussian with the given mean and
// standard deviation; max(0, best - mean) when sigma is zero.
double expected_improvement(double mean, double sigma, double best);
double expected_improvement(const GpModel& model, std::span<const double> x, double best);

// ---------------------------------------------------------------------------
// Bayesian optimization loop

struct Trial {
  enum class Status { ok, failed };
  std::vector<double> params;
  double objective = 0.0;
  Status status = Status::ok;
};

// Returns the loss to minimize. Throwing nirchem::Error or returning a
// non-finite value marks the trial as failed.
using Objective = std::function<double(const std::vector<double>&)>;

struct OptimizeOptions {
  int n_init = 20;
  int n_iter = 40;
  std::uint64_t seed = 0;
  int candidates = 2048;
  int refine_starts = 5;
  GpFitOptions gp;
  // When set, trials are appended as JSON lines and an existing file is
  // resumed from.
  std::optional<std::filesystem::path> trace_path;
};

struct OptimizeResult {
  Trial best;
  std::vector<Trial> trace;
};

OptimizeResult optimize(const SearchSpace& space, const Objective& objective, const OptimizeOptions& options);

// Running minimum of the objective over ok trials (NaN before the first).
std::vector<double> best_so_far(const std::vector<Trial>& trace);

std::string trial_to_json(const Trial& trial, std::size_t index);
Trial trial_from_json(const std::string& line);
std::vector<Trial> load_trace(const std::filesystem::path& path);
void write_convergence_csv(const std::vector<Trial>& trace, const std::filesystem::path& path);

}  // namespace nirchem
