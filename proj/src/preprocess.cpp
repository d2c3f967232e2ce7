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


#include "nirchem/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "json.hpp"
#include "nirchem/error.hpp"
#include "nirchem/rng.hpp"

namespace nirchem {

double global_mean(const SpectraSet& set) {
  if (set.absorbance.size() == 0) throw Error("global_mean: empty set");
  return set.absorbance.mean();
}

double global_std(const SpectraSet& set) {
  const double mean = global_mean(set);
  const double var = (set.absorbance.array() - mean).square().mean();
  return std::sqrt(var);
}

void AugmentConfig::validate() const {
  if (copies < 0) throw Error("augment: copies must be non-negative");
  if (offset_scale < 0.0 || mult_scale < 0.0) throw Error("augment: scales must be non-negative");
  if (!(slope_low > 0.0 && slope_low <= slope_high)) throw Error("augment: slope range must satisfy 0 < low <= high");
}

Vector slope_ramp(std::size_t count, double slope) {
  // Written as 1 + (s - 1) * t with t symmetric in [-1, 1] so the mean is
  // exactly one up to rounding.
  Vector ramp(static_cast<Eigen::Index>(count));
  const double n1 = static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = (2.0 * static_cast<double>(i) - n1) / n1;
    ramp[static_cast<Eigen::Index>(i)] = 1.0 + (slope - 1.0) * t;
  }
  return ramp;
}

Vector apply_augmentation(const Eigen::Ref<const Vector>& spectrum, const AugmentDraw& draw) {
  const Vector ramp = slope_ramp(static_cast<std::size_t>(spectrum.size()), draw.slope);
  return ((spectrum * draw.multiplier).array() * ramp.array() + draw.offset).matrix();
}

AugmentDraw augment_draw(const AugmentConfig& config, double train_std, std::size_t sample, std::size_t copy) {
  Rng rng = Rng::substream(config.seed, sample, copy);
  const double offset_amp = config.offset_scale * train_std;
  const double mult_amp = config.mult_scale * train_std;
  AugmentDraw draw;
  draw.offset = rng.uniform(-offset_amp, offset_amp);
  draw.multiplier = rng.uniform(1.0 - mult_amp, 1.0 + mult_amp);
  draw.slope = rng.uniform(config.slope_low, config.slope_high);
  return draw;
}

SpectraSet augment(const SpectraSet& set, const AugmentConfig& config, double train_std) {
  config.validate();
  if (!(train_std > 0.0)) throw Error("augment: training standard deviation must be positive");
  const std::size_t n = set.size();
  const auto copies = static_cast<std::size_t>(config.copies);
  const auto total = static_cast<Eigen::Index>(n * (copies + 1));

  SpectraSet out;
  out.grid = set.grid;
  out.absorbance.resize(total, set.absorbance.cols());
  out.absorbance.topRows(static_cast<Eigen::Index>(n)) = set.absorbance;
  out.reference_mg = set.reference_mg;
  out.instrument = set.instrument;
  out.sample_id = set.sample_id;
  out.reference_mg.reserve(static_cast<std::size_t>(total));
  out.instrument.reserve(static_cast<std::size_t>(total));
  out.sample_id.reserve(static_cast<std::size_t>(total));

  for (std::size_t k = 1; k <= copies; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(k * n + i);
      const AugmentDraw draw = augment_draw(config, train_std, i, k);
      out.absorbance.row(row) =
          apply_augmentation(set.absorbance.row(static_cast<Eigen::Index>(i)).transpose(), draw).transpose();
      out.reference_mg.push_back(set.reference_mg[i]);
      out.instrument.push_back(set.instrument[i]);
      out.sample_id.push_back(set.sample_id[i] + "#" + std::to_string(k));
    }
  }
  return out;
}

namespace {

constexpr double kRankTolerance = 1e-10;
constexpr double kMinMultiplier = 1e-8;

}  // namespace

EmscModel emsc_model(Vector reference, int order) {
  if (order < 0) throw Error("emsc: order must be non-negative");
  if (reference.size() < 2 || !reference.allFinite()) throw Error("emsc: reference must be finite with at least two points");
  const Eigen::Index count = reference.size();
  const Eigen::Index terms = order + 2;
  if (terms > count) throw Error("emsc: more basis terms than wavelengths");

  EmscModel model;
  model.order = order;
  model.reference = std::move(reference);
  model.basis.resize(count, terms);
  const Vector axis = Vector::LinSpaced(count, -1.0, 1.0);
  for (Eigen::Index p = 0; p <= order; ++p) model.basis.col(p) = axis.array().pow(static_cast<double>(p)).matrix();
  model.basis.col(terms - 1) = model.reference;

  Eigen::MatrixXd normalized = model.basis;
  for (Eigen::Index c = 0; c < terms; ++c) {
    const double norm = normalized.col(c).norm();
    if (norm == 0.0) throw Error("emsc: basis is rank deficient (reference spectrum is zero)");
    normalized.col(c) /= norm;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(normalized);
  if (svd.singularValues().minCoeff() < kRankTolerance) {
    throw Error("emsc: basis is rank deficient (reference spectrum is collinear with the polynomial baseline)");
  }
  const Eigen::MatrixXd basis = model.basis;
  model.projector = basis.completeOrthogonalDecomposition().pseudoInverse();
  return model;
}

EmscModel emsc_fit(const SpectraSet& train, int order) {
  if (train.size() == 0) throw Error("emsc_fit: empty training set");
  return emsc_model(train.absorbance.colwise().mean().transpose(), order);
}

EmscCoefficients emsc_coefficients(const EmscModel& model, const Eigen::Ref<const Vector>& spectrum) {
  const Vector coef = model.projector * spectrum;
  EmscCoefficients out;
  out.baseline = coef.head(coef.size() - 1);
  out.multiplier = coef[coef.size() - 1];
  return out;
}

SpectraSet emsc_apply(const EmscModel& model, const SpectraSet& set) {
  if (set.absorbance.cols() != model.reference.size()) {
    throw Error("emsc_apply: spectrum length " + std::to_string(set.absorbance.cols()) +
                " does not match reference length " + std::to_string(model.reference.size()));
  }
  const Eigen::Index terms = model.basis.cols();
  SpectraSet out = set;
  for (Eigen::Index i = 0; i < set.absorbance.rows(); ++i) {
    const Vector z = set.absorbance.row(i).transpose();
    const EmscCoefficients coef = emsc_coefficients(model, z);
    if (std::abs(coef.multiplier) < kMinMultiplier) {
      throw Error("emsc_apply: degenerate multiplicative coefficient for sample '" +
                  set.sample_id[static_cast<std::size_t>(i)] + "'");
    }
    const Vector baseline = model.basis.leftCols(terms - 1) * coef.baseline;
    out.absorbance.row(i) = ((z - baseline) / coef.multiplier).transpose();
  }
  return out;
}

Scaler scaler_fit(const SpectraSet& train) {
  if (train.size() == 0) throw Error("scaler_fit: empty training set");
  Scaler s{global_mean(train), global_std(train)};
  if (!(s.std > 0.0)) throw Error("scaler_fit: global standard deviation is zero");
  return s;
}

SpectraSet scaler_apply(const Scaler& scaler, const SpectraSet& set) {
  SpectraSet out = set;
  out.absorbance = (set.absorbance.array() - scaler.mean) / (2.0 * scaler.std);
  return out;
}

std::string step_name(PreprocessStep step) {
  switch (step) {
    case PreprocessStep::augment: return "DA";
    case PreprocessStep::emsc: return "EMSC";
    case PreprocessStep::global_scaling: return "GS";
  }
  return "?";
}

PreprocessStep parse_step(const std::string& name) {
  if (name == "DA") return PreprocessStep::augment;
  if (name == "EMSC") return PreprocessStep::emsc;
  if (name == "GS") return PreprocessStep::global_scaling;
  throw Error("unknown preprocessing step '" + name + "' (expected DA, EMSC or GS)");
}

bool PreprocessChain::has(PreprocessStep step) const {
  return std::find(steps.begin(), steps.end(), step) != steps.end();
}

void PreprocessChain::validate_order() const {
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (static_cast<int>(steps[i]) <= static_cast<int>(steps[i - 1])) {
      throw Error("preprocessing chain must be ordered DA, EMSC, GS without repeats; got " +
                  step_name(steps[i - 1]) + " before " + step_name(steps[i]));
    }
  }
}

DataSplits fit_chain(PreprocessChain& chain, const DataSplits& splits) {
  chain.validate_order();
  DataSplits out = splits;
  for (const auto step : chain.steps) {
    switch (step) {
      case PreprocessStep::augment: {
        chain.augment_train_std = global_std(out.train);
        AugmentConfig val_config = chain.augment_config;
        val_config.seed = mix_seed(chain.augment_config.seed, 0x7a11d);
        out.train = augment(out.train, chain.augment_config, chain.augment_train_std);
        out.validation = augment(out.validation, val_config, chain.augment_train_std);
        break;
      }
      case PreprocessStep::emsc:
        chain.emsc = emsc_fit(out.train, chain.emsc_order);
        out.train = emsc_apply(*chain.emsc, out.train);
        out.validation = emsc_apply(*chain.emsc, out.validation);
        out.test = emsc_apply(*chain.emsc, out.test);
        break;
      case PreprocessStep::global_scaling:
        chain.scaler = scaler_fit(out.train);
        out.train = scaler_apply(*chain.scaler, out.train);
        out.validation = scaler_apply(*chain.scaler, out.validation);
        out.test = scaler_apply(*chain.scaler, out.test);
        break;
    }
  }
  return out;
}

SpectraSet apply_chain(const PreprocessChain& chain, const SpectraSet& set) {
  SpectraSet out = set;
  for (const auto step : chain.steps) {
    if (step == PreprocessStep::emsc) {
      if (!chain.emsc) throw Error("apply_chain: EMSC step has not been fitted");
      out = emsc_apply(*chain.emsc, out);
    } else if (step == PreprocessStep::global_scaling) {
      if (!chain.scaler) throw Error("apply_chain: scaling step has not been fitted");
      out = scaler_apply(*chain.scaler, out);
    }
  }
  return out;
}

std::string chain_to_json(const PreprocessChain& chain) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto step : chain.steps) {
    json s{{"step", step_name(step)}};
    switch (step) {
      case PreprocessStep::augment:
        s["offset_scale"] = chain.augment_config.offset_scale;
        s["mult_scale"] = chain.augment_config.mult_scale;
        s["slope_low"] = chain.augment_config.slope_low;
        s["slope_high"] = chain.augment_config.slope_high;
        s["copies"] = chain.augment_config.copies;
        s["seed"] = chain.augment_config.seed;
        s["train_std"] = chain.augment_train_std;
        break;
      case PreprocessStep::emsc:
        s["order"] = chain.emsc_order;
        if (chain.emsc) s["reference"] = std::vector<double>(chain.emsc->reference.begin(), chain.emsc->reference.end());
        break;
      case PreprocessStep::global_scaling:
        if (chain.scaler) {
          s["mean"] = chain.scaler->mean;
          s["std"] = chain.scaler->std;
        }
        break;
    }
    steps.push_back(std::move(s));
  }
  return json{{"steps", steps}}.dump(2);
}

PreprocessChain chain_from_json(const std::string& text) {
  using nlohmann::json;
  PreprocessChain chain;
  try {
    const json doc = json::parse(text);
    for (const auto& s : doc.at("steps")) {
      const auto step = parse_step(s.at("step").get<std::string>());
      chain.steps.push_back(step);
      switch (step) {
        case PreprocessStep::augment:
          chain.augment_config.offset_scale = s.at("offset_scale").get<double>();
          chain.augment_config.mult_scale = s.at("mult_scale").get<double>();
          chain.augment_config.slope_low = s.at("slope_low").get<double>();
          chain.augment_config.slope_high = s.at("slope_high").get<double>();
          chain.augment_config.copies = s.at("copies").get<int>();
          chain.augment_config.seed = s.at("seed").get<std::uint64_t>();
          chain.augment_train_std = s.value("train_std", 0.0);
          break;
        case PreprocessStep::emsc:
          chain.emsc_order = s.at("order").get<int>();
          if (s.contains("reference")) {
            const auto ref = s.at("reference").get<std::vector<double>>();
            chain.emsc = emsc_model(Eigen::Map<const Vector>(ref.data(), static_cast<Eigen::Index>(ref.size())),
                                    chain.emsc_order);
          }
          break;
        case PreprocessStep::global_scaling:
          if (s.contains("mean")) chain.scaler = Scaler{s.at("mean").get<double>(), s.at("std").get<double>()};
          break;
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("preprocessing chain JSON: ") + e.what());
  }
  chain.validate_order();
  return chain;
}

}  // namespace nirchem
