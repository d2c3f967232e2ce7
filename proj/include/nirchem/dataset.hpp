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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace nirchem {

// Spectra are stored one per row so a single spectrum is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct WavelengthGrid {
  double start_nm = 0.0;
  double step_nm = 1.0;
  std::size_t count = 2;

  double at(std::size_t i) const { return start_nm + step_nm * static_cast<double>(i); }
  double last_nm() const { return at(count - 1); }

  // Throws nirchem::Error unless step_nm > 0 and count >= 2.
  void validate() const;

  bool operator==(const WavelengthGrid&) const = default;
};

// Absorbance spectra on a shared grid together with the assay reference value
// (mg), the recording instrument (1 or 2) and an opaque unique sample id.
struct SpectraSet {
  WavelengthGrid grid;
  Matrix absorbance;
  std::vector<double> reference_mg;
  std::vector<int> instrument;
  std::vector<std::string> sample_id;

  std::size_t size() const { return reference_mg.size(); }

  // Checks every invariant (shapes, finiteness, positive references,
  // instrument labels, unique ids). Throws nirchem::Error on violation.
  void validate() const;

  // Rows in the given order.
  SpectraSet subset(std::span<const std::size_t> rows) const;
};

// Rows of `a` followed by rows of `b`; grids must match.
SpectraSet concat(const SpectraSet& a, const SpectraSet& b);

SpectraSet load_csv(const std::filesystem::path& path);
void save_csv(const SpectraSet& set, const std::filesystem::path& path);

// Keeps the wavelengths inside the closed interval [low_nm, high_nm].
SpectraSet restrict_region(const SpectraSet& set, double low_nm, double high_nm);

struct SplitProvenance {
  std::string scheme;
  std::vector<std::pair<std::string, double>> parameters;
  std::uint64_t seed = 0;
};

struct DataSplits {
  SpectraSet train;
  SpectraSet validation;
  SpectraSet test;
  SplitProvenance provenance;
};

// Test rows are drawn from instrument 2, validation rows from instrument 1 and
// the remaining instrument-1 rows form the training set. Subset sizes are
// round(fraction * pool size); each subset keeps file order.
DataSplits standard_split(const SpectraSet& set, double test_fraction, double val_fraction,
                          std::uint64_t seed);

// train: instrument 1, reference < train_below_mg
// validation: instrument 1, train_below_mg <= reference <= val_upper_mg
// test: instrument 2, reference > val_upper_mg
DataSplits extrapolation_split(const SpectraSet& set, double train_below_mg, double val_upper_mg);

// Desk-scale stand-in for a tablet NIR dataset: linear mixing of Gaussian
// peak templates for the active ingredient, an excipient matrix and an
// interferent, followed by scatter artifacts and white noise.
struct SyntheticConfig {
  std::size_t n_samples = 500;
  std::size_t n_peaks = 4;
  double conc_low_mg = 160.0;
  double conc_high_mg = 240.0;
  double offset_amplitude = 0.05;
  double mult_amplitude = 0.05;
  double slope_amplitude = 0.05;
  double noise_std = 1e-3;
  std::uint64_t seed = 1;
  WavelengthGrid grid{600.0, 2.0, 600};
  // Total tablet mass; the excipient mass is tablet_mg - api. Zero disables
  // the excipient contribution.
  double tablet_mg = 800.0;
  // Flat absorbance level of the tablet matrix under the bands.
  double baseline_absorbance = 2.5;
  double interferent_scale = 0.3;
  double instrument2_fraction = 0.5;
  double instrument2_offset = 0.02;
  double instrument2_slope = 0.02;

  void validate() const;
};

// Per-mg absorbance profiles used by synthesize().
struct SyntheticTemplates {
  Vector api;
  Vector excipient;
  Vector interferent;
};

SyntheticTemplates synthetic_templates(const SyntheticConfig& config);
SpectraSet synthesize(const SyntheticConfig& config);

}  // namespace nirchem
