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


#include "nirchem/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "nirchem/error.hpp"
#include "nirchem/rng.hpp"
#include "text.hpp"

namespace nirchem {

void WavelengthGrid::validate() const {
  if (!(step_nm > 0.0) || !std::isfinite(step_nm)) throw Error("wavelength grid: step must be positive");
  if (count < 2) throw Error("wavelength grid: at least two wavelengths required");
  if (!std::isfinite(start_nm)) throw Error("wavelength grid: non-finite start");
}

void SpectraSet::validate() const {
  grid.validate();
  const std::size_t n = reference_mg.size();
  if (n == 0) throw Error("spectra set: no samples");
  if (instrument.size() != n || sample_id.size() != n || static_cast<std::size_t>(absorbance.rows()) != n) {
    throw Error("spectra set: inconsistent row counts");
  }
  if (static_cast<std::size_t>(absorbance.cols()) != grid.count) {
    throw Error("spectra set: absorbance width does not match grid");
  }
  if (!absorbance.allFinite()) throw Error("spectra set: non-finite absorbance value");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(reference_mg[i] > 0.0) || !std::isfinite(reference_mg[i])) {
      throw Error("spectra set: reference value of sample '" + sample_id[i] + "' must be positive");
    }
    if (instrument[i] != 1 && instrument[i] != 2) {
      throw Error("spectra set: instrument of sample '" + sample_id[i] + "' must be 1 or 2");
    }
    if (!seen.insert(sample_id[i]).second) {
      throw Error("spectra set: duplicate sample id '" + sample_id[i] + "'");
    }
  }
}

SpectraSet SpectraSet::subset(std::span<const std::size_t> rows) const {
  SpectraSet out;
  out.grid = grid;
  out.absorbance.resize(static_cast<Eigen::Index>(rows.size()), absorbance.cols());
  out.reference_mg.reserve(rows.size());
  out.instrument.reserve(rows.size());
  out.sample_id.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = rows[r];
    if (i >= size()) throw Error("spectra set: row index out of range");
    out.absorbance.row(static_cast<Eigen::Index>(r)) = absorbance.row(static_cast<Eigen::Index>(i));
    out.reference_mg.push_back(reference_mg[i]);
    out.instrument.push_back(instrument[i]);
    out.sample_id.push_back(sample_id[i]);
  }
  return out;
}

SpectraSet concat(const SpectraSet& a, const SpectraSet& b) {
  if (!(a.grid == b.grid)) throw Error("concat: wavelength grids differ");
  SpectraSet out;
  out.grid = a.grid;
  out.absorbance.resize(a.absorbance.rows() + b.absorbance.rows(), a.absorbance.cols());
  out.absorbance.topRows(a.absorbance.rows()) = a.absorbance;
  out.absorbance.bottomRows(b.absorbance.rows()) = b.absorbance;
  out.reference_mg = a.reference_mg;
  out.reference_mg.insert(out.reference_mg.end(), b.reference_mg.begin(), b.reference_mg.end());
  out.instrument = a.instrument;
  out.instrument.insert(out.instrument.end(), b.instrument.begin(), b.instrument.end());
  out.sample_id = a.sample_id;
  out.sample_id.insert(out.sample_id.end(), b.sample_id.begin(), b.sample_id.end());
  return out;
}

namespace {

constexpr const char* kFixedColumns[] = {"sample_id", "reference_mg", "instrument"};
constexpr std::size_t kFixedCount = 3;
constexpr double kSpacingTolerance = 1e-9;

std::string location(std::size_t data_row, std::string_view column) {
  std::ostringstream os;
  os << "data row " << data_row << " (line " << data_row + 1 << "), column \"" << column << "\"";
  return os.str();
}

}  // namespace

SpectraSet load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv: cannot open " + path.string());
  const std::string where = "load_csv " + path.string() + ": ";

  std::string line;
  if (!std::getline(in, line)) throw Error(where + "missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = detail::split_fields(line);
  if (header.size() < kFixedCount + 2) {
    throw Error(where + "malformed header: expected sample_id,reference_mg,instrument and at least two wavelengths");
  }
  for (std::size_t c = 0; c < kFixedCount; ++c) {
    if (header[c] != kFixedColumns[c]) {
      throw Error(where + "malformed header: column " + std::to_string(c + 1) + " must be '" +
                  kFixedColumns[c] + "', found '" + std::string(header[c]) + "'");
    }
  }
  const std::size_t n_wl = header.size() - kFixedCount;
  std::vector<double> wavelengths(n_wl);
  std::vector<std::string> column_names(n_wl);
  for (std::size_t c = 0; c < n_wl; ++c) {
    column_names[c] = std::string(header[kFixedCount + c]);
    const auto value = detail::parse_double(header[kFixedCount + c]);
    if (!value || !std::isfinite(*value)) {
      throw Error(where + "malformed header: wavelength column '" + column_names[c] + "' is not a number");
    }
    wavelengths[c] = *value;
  }
  const double step = wavelengths[1] - wavelengths[0];
  if (!(step > 0.0)) throw Error(where + "wavelength columns must be strictly increasing");
  for (std::size_t c = 1; c < n_wl; ++c) {
    const double spacing = wavelengths[c] - wavelengths[c - 1];
    if (std::abs(spacing - step) > kSpacingTolerance * std::abs(step)) {
      throw Error(where + "non-uniform wavelength spacing at column \"" + column_names[c] + "\"");
    }
  }

  SpectraSet set;
  set.grid = WavelengthGrid{wavelengths.front(), (wavelengths.back() - wavelengths.front()) / static_cast<double>(n_wl - 1), n_wl};
  std::vector<double> values;
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++data_row;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(where + "ragged row: data row " + std::to_string(data_row) + " has " +
                  std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
    }
    set.sample_id.emplace_back(fields[0]);
    const auto ref = detail::parse_double(fields[1]);
    if (!ref) throw Error(where + location(data_row, "reference_mg") + ": not a number");
    if (!std::isfinite(*ref)) throw Error(where + location(data_row, "reference_mg") + ": non-finite value");
    set.reference_mg.push_back(*ref);
    const auto inst = detail::parse_double(fields[2]);
    if (!inst || (*inst != 1.0 && *inst != 2.0)) {
      throw Error(where + location(data_row, "instrument") + ": instrument must be 1 or 2");
    }
    set.instrument.push_back(static_cast<int>(*inst));
    for (std::size_t c = 0; c < n_wl; ++c) {
      const auto v = detail::parse_double(fields[kFixedCount + c]);
      if (!v) throw Error(where + location(data_row, column_names[c]) + ": not a number");
      if (!std::isfinite(*v)) throw Error(where + location(data_row, column_names[c]) + ": non-finite value");
      values.push_back(*v);
    }
  }
  if (data_row == 0) throw Error(where + "no samples");

  set.absorbance = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(data_row),
                                            static_cast<Eigen::Index>(n_wl));
  try {
    set.validate();
  } catch (const Error& e) {
    throw Error(where + e.what());
  }
  return set;
}

void save_csv(const SpectraSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_csv: cannot open " + path.string() + " for writing");
  out << "sample_id,reference_mg,instrument";
  for (std::size_t c = 0; c < set.grid.count; ++c) out << ',' << detail::format_exact(set.grid.at(c));
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.sample_id[i] << ',' << detail::format_exact(set.reference_mg[i]) << ',' << set.instrument[i];
    const auto row = set.absorbance.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index c = 0; c < row.size(); ++c) out << ',' << detail::format_exact(row[c]);
    out << '\n';
  }
  if (!out) throw Error("save_csv: write failed for " + path.string());
}

SpectraSet restrict_region(const SpectraSet& set, double low_nm, double high_nm) {
  if (!(low_nm < high_nm)) throw Error("restrict_region: low bound must be below high bound");
  const double tol = 1e-9 * set.grid.step_nm;
  std::size_t first = set.grid.count;
  std::size_t last = 0;
  for (std::size_t i = 0; i < set.grid.count; ++i) {
    const double wl = set.grid.at(i);
    if (wl >= low_nm - tol && wl <= high_nm + tol) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == set.grid.count || last - first + 1 < 2) {
    throw Error("restrict_region: fewer than two wavelengths fall inside [" + detail::format_exact(low_nm) +
                ", " + detail::format_exact(high_nm) + "] nm");
  }
  SpectraSet out = set;
  out.grid = WavelengthGrid{set.grid.at(first), set.grid.step_nm, last - first + 1};
  out.absorbance = set.absorbance.middleCols(static_cast<Eigen::Index>(first),
                                             static_cast<Eigen::Index>(out.grid.count));
  return out;
}

namespace {

std::vector<std::size_t> rows_where(const SpectraSet& set, auto&& predicate) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (predicate(i)) rows.push_back(i);
  }
  return rows;
}

void require_non_empty(const DataSplits& splits, const char* op) {
  const std::string prefix = std::string(op) + ": ";
  if (splits.train.size() == 0) throw Error(prefix + "training subset would be empty");
  if (splits.validation.size() == 0) throw Error(prefix + "validation subset would be empty");
  if (splits.test.size() == 0) throw Error(prefix + "test subset would be empty");
}

// Draws `count` rows uniformly from `pool`; returns (drawn, remaining) in file order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> draw_rows(std::vector<std::size_t> pool,
                                                                        std::size_t count, Rng rng) {
  rng.shuffle(std::span(pool));
  std::vector<std::size_t> drawn(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<std::size_t> rest(pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end());
  std::sort(drawn.begin(), drawn.end());
  std::sort(rest.begin(), rest.end());
  return {std::move(drawn), std::move(rest)};
}

}  // namespace

DataSplits standard_split(const SpectraSet& set, double test_fraction, double val_fraction,
                          std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0) || !(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error("standard_split: fractions must lie in (0, 1)");
  }
  const auto pool1 = rows_where(set, [&](std::size_t i) { return set.instrument[i] == 1; });
  const auto pool2 = rows_where(set, [&](std::size_t i) { return set.instrument[i] == 2; });
  if (pool1.empty() || pool2.empty()) {
    throw Error("standard_split: both instruments must be present (instrument 1 for training, 2 for test)");
  }
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(pool2.size())));
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(pool1.size())));

  const auto [test_rows, unused] = draw_rows(pool2, n_test, Rng::substream(seed, 1));
  const auto [val_rows, train_rows] = draw_rows(pool1, n_val, Rng::substream(seed, 2));

  DataSplits splits{set.subset(train_rows), set.subset(val_rows), set.subset(test_rows),
                    SplitProvenance{"standard", {{"test_fraction", test_fraction}, {"val_fraction", val_fraction}}, seed}};
  require_non_empty(splits, "standard_split");
  return splits;
}

DataSplits extrapolation_split(const SpectraSet& set, double train_below_mg, double val_upper_mg) {
  if (!(train_below_mg < val_upper_mg)) {
    throw Error("extrapolation_split: train_below_mg must be below val_upper_mg");
  }
  const auto train_rows = rows_where(set, [&](std::size_t i) {
    return set.instrument[i] == 1 && set.reference_mg[i] < train_below_mg;
  });
  const auto val_rows = rows_where(set, [&](std::size_t i) {
    return set.instrument[i] == 1 && set.reference_mg[i] >= train_below_mg && set.reference_mg[i] <= val_upper_mg;
  });
  const auto test_rows = rows_where(set, [&](std::size_t i) {
    return set.instrument[i] == 2 && set.reference_mg[i] > val_upper_mg;
  });
  DataSplits splits{set.subset(train_rows), set.subset(val_rows), set.subset(test_rows),
                    SplitProvenance{"extrapolation", {{"train_below_mg", train_below_mg}, {"val_upper_mg", val_upper_mg}}, 0}};
  require_non_empty(splits, "extrapolation_split");
  return splits;
}

void SyntheticConfig::validate() const {
  grid.validate();
  if (n_samples < 1) throw Error("synthetic config: n_samples must be positive");
  if (n_peaks < 1) throw Error("synthetic config: n_peaks must be at least 1");
  if (!(conc_low_mg > 0.0 && conc_low_mg < conc_high_mg)) {
    throw Error("synthetic config: concentration range must satisfy 0 < low < high");
  }
  if (offset_amplitude < 0.0 || mult_amplitude < 0.0 || slope_amplitude < 0.0 || noise_std < 0.0 ||
      interferent_scale < 0.0) {
    throw Error("synthetic config: amplitudes must be non-negative");
  }
  if (!std::isfinite(baseline_absorbance)) throw Error("synthetic config: baseline_absorbance must be finite");
  if (tablet_mg != 0.0 && tablet_mg < conc_high_mg) {
    throw Error("synthetic config: tablet_mg must be zero or at least the highest concentration");
  }
  if (!(instrument2_fraction >= 0.0 && instrument2_fraction <= 1.0)) {
    throw Error("synthetic config: instrument2_fraction must lie in [0, 1]");
  }
}

namespace {

// Sum of Gaussian bands with random centre, width and height, rescaled so the
// largest value is one.
Vector random_band_profile(const WavelengthGrid& grid, std::size_t bands, double min_width, double max_width,
                           Rng& rng) {
  const double span = grid.last_nm() - grid.start_nm;
  Vector profile = Vector::Zero(static_cast<Eigen::Index>(grid.count));
  for (std::size_t b = 0; b < bands; ++b) {
    const double centre = grid.start_nm + span * rng.uniform(0.1, 0.9);
    const double width = span * rng.uniform(min_width, max_width);
    const double height = rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i < grid.count; ++i) {
      const double z = (grid.at(i) - centre) / width;
      profile[static_cast<Eigen::Index>(i)] += height * std::exp(-0.5 * z * z);
    }
  }
  return profile / profile.maxCoeff();
}

Vector scaled_axis(const WavelengthGrid& grid) {
  return Vector::LinSpaced(static_cast<Eigen::Index>(grid.count), -1.0, 1.0);
}

}  // namespace

SyntheticTemplates synthetic_templates(const SyntheticConfig& config) {
  config.validate();
  Rng rng = Rng::substream(config.seed, 0x7e3a);
  const double mid = 0.5 * (config.conc_low_mg + config.conc_high_mg);
  SyntheticTemplates t;
  // API bands are narrow, the excipient matrix is broad and featureless.
  t.api = random_band_profile(config.grid, config.n_peaks, 0.01, 0.05, rng) / mid;
  t.excipient = random_band_profile(config.grid, 3, 0.08, 0.25, rng) * 0.8;
  if (config.tablet_mg > 0.0) t.excipient /= (config.tablet_mg - mid);
  t.interferent = random_band_profile(config.grid, 2, 0.02, 0.06, rng);
  return t;
}

SpectraSet synthesize(const SyntheticConfig& config) {
  const SyntheticTemplates t = synthetic_templates(config);
  const Vector axis = scaled_axis(config.grid);
  const auto n = config.n_samples;

  SpectraSet set;
  set.grid = config.grid;
  set.absorbance.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config.grid.count));
  set.reference_mg.resize(n);
  set.instrument.resize(n);
  set.sample_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(config.seed, 0x5a3b, i);
    const double api = rng.uniform(config.conc_low_mg, config.conc_high_mg);
    const int instrument = rng.uniform() < config.instrument2_fraction ? 2 : 1;
    const double interferent = config.interferent_scale * rng.uniform();
    const double offset = rng.uniform(-config.offset_amplitude, config.offset_amplitude);
    const double mult = rng.uniform(1.0 - config.mult_amplitude, 1.0 + config.mult_amplitude);
    const double slope = rng.uniform(-config.slope_amplitude, config.slope_amplitude);

    Vector spectrum = api * t.api + interferent * t.interferent;
    if (config.tablet_mg > 0.0) spectrum += (config.tablet_mg - api) * t.excipient;
    if (config.baseline_absorbance != 0.0) spectrum.array() += config.baseline_absorbance;
    if (mult != 1.0) spectrum *= mult;
    if (offset != 0.0) spectrum.array() += offset;
    if (slope != 0.0) spectrum += slope * axis;
    if (instrument == 2) {
      spectrum.array() += config.instrument2_offset;
      spectrum += config.instrument2_slope * axis;
    }
    if (config.noise_std > 0.0) {
      for (Eigen::Index j = 0; j < spectrum.size(); ++j) spectrum[j] += config.noise_std * rng.normal();
    }
    set.absorbance.row(static_cast<Eigen::Index>(i)) = spectrum.transpose();
    set.reference_mg[i] = api;
    set.instrument[i] = instrument;
    set.sample_id[i] = "S" + std::to_string(i + 1);
  }
  set.validate();
  return set;
}

}  // namespace nirchem
