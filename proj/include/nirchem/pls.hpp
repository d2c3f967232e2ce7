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
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nirchem/dataset.hpp"

namespace nirchem {

// Single-response PLS model. Columns of `weights` have unit norm.
struct PlsModel {
  Vector x_mean;
  double y_mean = 0.0;
  Eigen::MatrixXd weights;   // p x A
  Eigen::MatrixXd loadings;  // p x A
  Vector y_loadings;         // A
  Vector coefficients;       // p, b = W (P^T W)^-1 q
  int n_components = 0;
};

struct NipalsOptions {
  double tol = 1e-16;
  int max_iter = 100000;
};

// NIPALS PLS1 on column-centred data (no variance scaling).
PlsModel pls_fit(const Matrix& x, const Vector& y, int components, const NipalsOptions& options = {});

// y = (x - x_mean) b + y_mean
Vector pls_predict(const PlsModel& model, const Matrix& x);

// Scores obtained by sequential deflation with the stored weights/loadings;
// on the training data these are the NIPALS score vectors.
Eigen::MatrixXd pls_scores(const PlsModel& model, const Matrix& x);

// Prediction through the deflation path: y_mean + sum_a q_a t_a.
Vector pls_predict_deflation(const PlsModel& model, const Matrix& x);

// Model using only the first `components` components.
PlsModel pls_truncate(const PlsModel& model, int components);

struct ComponentRange {
  int low = 1;
  int high = 30;
};

// Huber losses per component count. holdout_loss is empty unless a holdout
// set was supplied.
struct CvCurve {
  std::vector<int> components;
  std::vector<double> train_loss;
  std::vector<double> cv_loss;
  std::vector<double> corrected_cv_loss;
  std::vector<double> holdout_loss;
};

struct Holdout {
  const Matrix& x;
  const Vector& y;
};

struct CvOptions {
  int folds = 10;
  ComponentRange range;
  double huber_delta = 1.0;
  std::uint64_t seed = 0;
  NipalsOptions nipals;
};

// When a fit runs out of response variance before reaching a component count,
// larger counts reuse the largest model that could be extracted.
CvCurve cross_validate(const Matrix& x, const Vector& y, const CvOptions& options,
                       std::optional<Holdout> holdout = std::nullopt);

struct OutlierResult {
  SpectraSet kept;
  std::vector<std::string> removed;
  int components = 0;
  std::vector<double> abs_errors;  // per input sample
  double threshold = 0.0;
};

// Single pass: pick the component count with the lowest mean CV loss, refit
// on all samples and drop samples whose absolute error exceeds
// sigma_mult * std(abs errors). Errors below 1e-9 * std(y) are never flagged.
OutlierResult remove_outliers(const SpectraSet& set, double sigma_mult, const CvOptions& options);

enum class ComponentStrategy { holdout_optimal, cv, corrected_cv };

ComponentStrategy parse_strategy(const std::string& name);
std::string strategy_name(ComponentStrategy strategy);

// Arg-min of the curve selected by the strategy; ties go to fewer components.
int choose_components(const CvCurve& curve, ComponentStrategy strategy);

struct ComponentSelection {
  int components = 0;
  CvCurve curve;
};

ComponentSelection select_components(const SpectraSet& train, const SpectraSet& holdout,
                                     ComponentStrategy strategy, const CvOptions& options);

Matrix as_matrix(const SpectraSet& set);
Vector as_vector(const std::vector<double>& values);

std::string pls_to_json(const PlsModel& model);
PlsModel pls_from_json(const std::string& text);
void write_cv_curve_csv(const CvCurve& curve, const std::filesystem::path& path);

}  // namespace nirchem
