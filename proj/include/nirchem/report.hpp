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

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nirchem/cnn.hpp"
#include "nirchem/dataset.hpp"

namespace nirchem {

struct Metrics {
  std::size_t count = 0;
  std::optional<double> r2;  // squared Pearson correlation; empty if either side is constant
  double rmse = 0.0;
  double huber = 0.0;
};

Metrics evaluate(std::span<const double> y_true, std::span<const double> y_pred, double huber_delta = 1.0);

struct SubsetResult {
  std::string subset;  // "train", "validation" or "test"
  std::vector<std::string> sample_id;
  std::vector<double> y_true;
  std::vector<double> y_pred;
  Metrics metrics;     // unset (count 0) for an empty subset
};

struct EvalReport {
  std::string model_kind;  // "pls" or "cnn"
  std::string dataset;
  std::vector<SubsetResult> subsets;
};

// Computes metrics for one subset; an empty subset is kept with count 0.
SubsetResult make_subset_result(std::string subset, std::vector<std::string> ids, std::vector<double> y_true,
                                std::vector<double> y_pred, double huber_delta = 1.0);

enum class ActivityStat { l1, max };
ActivityStat parse_activity_stat(const std::string& name);

struct ActivationMap {
  int layer = 1;
  int kernel = 0;
  std::size_t first_grid_index = 0;  // grid index of position 0
  std::vector<double> activation;
  double score = 0.0;
};

// Grid index of output position 0 of a layer under center alignment.
std::size_t activation_offset(const CnnSpec& spec, int layer);

// Ranks the kernels of `layer` (1 or 2) by activity and returns the top `k`
// (all kernels if k exceeds the count). Order: score descending, then kernel
// index ascending.
std::vector<ActivationMap> top_kernel_activations(const CnnModel& model, std::span<const double> spectrum, int layer,
                                                  int k, ActivityStat stat = ActivityStat::l1);

// Columns: model,dataset,subset,n,r2,rmse,huber. Empty subsets are omitted.
void write_metrics_csv(const EvalReport& report, const std::filesystem::path& path);

struct MetricsRow {
  std::string model_kind;
  std::string dataset;
  std::string subset;
  Metrics metrics;
};
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Columns: subset,sample_id,y_true,y_pred.
void write_scatter_csv(const EvalReport& report, const std::filesystem::path& path);

// One row per grid point: wavelength_nm, spectrum, then one column per map
// named layer<L>_kernel<K>; cells outside a map's span are empty.
void write_activation_csv(const WavelengthGrid& grid, std::span<const double> spectrum,
                          const std::vector<ActivationMap>& maps, const std::filesystem::path& path);

// Writes metrics.csv and scatter.csv into `dir` (created if needed).
void export_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace nirchem
