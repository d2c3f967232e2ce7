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
#include <optional>
#include <string>
#include <vector>

#include "nirchem/dataset.hpp"

namespace nirchem {

// Population mean / standard deviation over every absorbance entry.
double global_mean(const SpectraSet& set);
double global_std(const SpectraSet& set);

// Random offset, multiplication and slope variation. Offset and multiplier
// amplitudes are fractions of the training set's global standard deviation.
struct AugmentConfig {
  double offset_scale = 0.10;
  double mult_scale = 0.10;
  double slope_low = 0.95;
  double slope_high = 1.05;
  int copies = 9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AugmentDraw {
  double offset = 0.0;
  double multiplier = 1.0;
  double slope = 1.0;
};

// Per-wavelength factor rising linearly from (2 - s) at the first grid point
// to s at the last; its mean over the grid is one.
Vector slope_ramp(std::size_t count, double slope);

// x' = (x * multiplier) * ramp(slope) + offset
Vector apply_augmentation(const Eigen::Ref<const Vector>& spectrum, const AugmentDraw& draw);

// The draw used for copy `copy` (1-based) of input row `sample`.
AugmentDraw augment_draw(const AugmentConfig& config, double train_std, std::size_t sample, std::size_t copy);

// Returns the input rows followed by `copies` blocks of augmented variants
// (block k holds variant k of every input row, ids suffixed "#k").
SpectraSet augment(const SpectraSet& set, const AugmentConfig& config, double train_std);

// Extended multiplicative scatter correction against a reference spectrum with
// a polynomial baseline in the wavelength axis rescaled to [-1, 1].
struct EmscModel {
  Vector reference;
  int order = 1;
  // count x (order + 2): [1, axis, axis^2, ..., reference]
  Matrix basis;
  // Least-squares projector, (order + 2) x count.
  Matrix projector;
};

struct EmscCoefficients {
  Vector baseline;  // constant and polynomial terms
  double multiplier = 1.0;
};

EmscModel emsc_model(Vector reference, int order);
EmscModel emsc_fit(const SpectraSet& train, int order);
EmscCoefficients emsc_coefficients(const EmscModel& model, const Eigen::Ref<const Vector>& spectrum);
SpectraSet emsc_apply(const EmscModel& model, const SpectraSet& set);

struct Scaler {
  double mean = 0.0;
  double std = 1.0;
};

Scaler scaler_fit(const SpectraSet& train);
// x -> (x - mean) / (2 std)
SpectraSet scaler_apply(const Scaler& scaler, const SpectraSet& set);

enum class PreprocessStep { augment, emsc, global_scaling };

std::string step_name(PreprocessStep step);
PreprocessStep parse_step(const std::string& name);

// Ordered list of steps with their fitted state. Augmentation only affects
// training and validation data; prediction applies the remaining steps.
struct PreprocessChain {
  std::vector<PreprocessStep> steps;
  AugmentConfig augment_config;
  double augment_train_std = 0.0;
  int emsc_order = 1;
  std::optional<EmscModel> emsc;
  std::optional<Scaler> scaler;

  bool has(PreprocessStep step) const;
  // Throws unless steps are unique and ordered DA, EMSC, GS.
  void validate_order() const;
};

// Fits the chain on `splits.train` (each step on the output of the previous
// one) and returns the transformed splits. The test subset is never augmented.
DataSplits fit_chain(PreprocessChain& chain, const DataSplits& splits);

// Applies the fitted, non-augmenting steps to new data.
SpectraSet apply_chain(const PreprocessChain& chain, const SpectraSet& set);

std::string chain_to_json(const PreprocessChain& chain);
PreprocessChain chain_from_json(const std::string& text);

}  // namespace nirchem
