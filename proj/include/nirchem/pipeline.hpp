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
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nirchem/cnn.hpp"
#include "nirchem/dataset.hpp"
#include "nirchem/error.hpp"
#include "nirchem/hyperopt.hpp"
#include "nirchem/pls.hpp"
#include "nirchem/preprocess.hpp"
#include "nirchem/report.hpp"

namespace nirchem {

// One JSON file fully determines a run. Keys (all optional unless noted):
//
//   name            dataset label used in reports
//   seed            base seed; every random stage derives its own stream
//   output_dir      stage outputs go to <output_dir>/{prepared,tune,model,evaluate,activations}
//   dataset         {"csv": path} or {"synthetic": {...SyntheticConfig fields}} (required)
//   region_nm       [low, high] wavelength window
//   outliers        {"enabled", "sigma", "scope": "global"|"per_instrument", "folds", "max_components"}
//   split           {"scheme": "standard", "test_fraction", "val_fraction"} or
//                   {"scheme": "extrapolation", "train_below_mg", "val_upper_mg"}
//   preprocessing   ordered subset of ["DA", "EMSC", "GS"]
//   augment         {"offset_scale", "mult_scale", "slope_low", "slope_high", "copies"}
//   emsc            {"order"}
//   model           {"kind": "cnn"|"pls", "spec": {...}, "train": {...}, "pls": {...}}
//   hyperopt        {"n_init", "n_iter", "candidates"}
//   activations     {"sample", "top", "stat": "l1"|"max"}
struct OutlierConfig {
  bool enabled = false;
  double sigma = 2.5;
  std::string scope = "global";
  int folds = 10;
  int max_components = 30;
};

struct SplitConfig {
  std::string scheme = "standard";
  double test_fraction = 0.2;
  double val_fraction = 0.2;
  double train_below_mg = 212.0;
  double val_upper_mg = 228.0;
};

struct CnnTrainSettings {
  // Unset values follow the augmentation-dependent defaults.
  std::optional<int> tune_epochs;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> plateau_patience;
  double plateau_factor = 0.5;
  int batch_size = 45;
  double noise_std = 0.01;
};

struct PlsSettings {
  ComponentStrategy strategy = ComponentStrategy::holdout_optimal;
  int max_components = 30;
  int folds = 10;
};

struct ModelConfig {
  std::string kind = "cnn";
  std::optional<CnnSpec> spec;  // skips tuning when set
  CnnTrainSettings train;
  PlsSettings pls;
};

struct HyperoptSettings {
  int n_init = 20;
  int n_iter = 40;
  int candidates = 2048;
};

struct ActivationSettings {
  std::size_t sample = 0;  // row of the prepared test subset
  int top = 5;
  ActivityStat stat = ActivityStat::l1;
};

struct PipelineConfig {
  std::string name = "dataset";
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> csv;
  std::optional<SyntheticConfig> synthetic;
  std::optional<std::pair<double, double>> region_nm;
  OutlierConfig outliers;
  SplitConfig split;
  std::vector<PreprocessStep> preprocessing;
  AugmentConfig augment;
  int emsc_order = 1;
  ModelConfig model;
  HyperoptSettings hyperopt;
  ActivationSettings activations;

  bool augmented() const;
  void validate() const;
};

// Relative CSV paths are resolved against `base_dir`. A seed override
// replaces the file's base seed before any seed-derived default is filled in.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                            std::optional<std::uint64_t> seed_override = std::nullopt);
PipelineConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);
// Normalized JSON with every default filled in.
std::string config_to_json(const PipelineConfig& config);

// Content hashes of the config sections each stage depends on (hex FNV-1a).
std::string prepare_hash(const PipelineConfig& config);
std::string tune_hash(const PipelineConfig& config);
std::string train_hash(const PipelineConfig& config);

// Stage seeds derived from the base seed.
std::uint64_t split_seed(const PipelineConfig& config);
std::uint64_t init_seed(const PipelineConfig& config);
std::uint64_t train_seed(const PipelineConfig& config);

// 40 / 200 epochs (tuning) and 100 / 250 epochs (final) with and without
// augmentation unless overridden.
TrainConfig tuning_train_config(const PipelineConfig& config);
TrainConfig final_train_config(const PipelineConfig& config);

struct PreparedData {
  DataSplits splits;
  PreprocessChain chain;
  std::vector<std::string> removed;
};

// Wraps nirchem::Error messages with the stage name.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& message) : Error(stage + ": " + message), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

PreparedData run_prepare(const PipelineConfig& config, std::ostream& log);
PreparedData load_prepared(const PipelineConfig& config);

struct TuneOutcome {
  CnnSpec best;
  OptimizeResult result;
};
TuneOutcome run_tune(const PipelineConfig& config, std::ostream& log);

struct TrainOutcome {
  std::optional<CnnModel> cnn;
  std::optional<PlsModel> pls;
  TrainHistory history;
};
TrainOutcome run_train(const PipelineConfig& config, std::ostream& log);

EvalReport run_evaluate(const PipelineConfig& config, std::ostream& log);
std::vector<ActivationMap> run_activations(const PipelineConfig& config, std::ostream& log);
SpectraSet run_synth(const PipelineConfig& config, std::ostream& log);

// One summary line: name, chain, train / validation / test sizes.
std::string format_sizes(const PipelineConfig& config, const DataSplits& splits);

}  // namespace nirchem
