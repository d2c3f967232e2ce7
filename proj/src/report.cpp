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


#include "nirchem/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nirchem/error.hpp"
#include "nirchem/loss.hpp"
#include "text.hpp"

namespace nirchem {

Metrics evaluate(std::span<const double> y_true, std::span<const double> y_pred, double huber_delta) {
  if (y_true.size() != y_pred.size()) throw Error("evaluate: y_true and y_pred differ in length");
  if (y_true.empty()) throw Error("evaluate: empty input");
  const std::size_t n = y_true.size();
  const double nd = static_cast<double>(n);
  std::vector<double> residuals(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    residuals[i] = y_pred[i] - y_true[i];
    sq += residuals[i] * residuals[i];
  }
  Metrics m;
  m.count = n;
  m.rmse = std::sqrt(sq / nd);
  m.huber = huber(residuals, huber_delta);

  const double mt = std::accumulate(y_true.begin(), y_true.end(), 0.0) / nd;
  const double mp = std::accumulate(y_pred.begin(), y_pred.end(), 0.0) / nd;
  double stt = 0.0;
  double spp = 0.0;
  double stp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = y_true[i] - mt;
    const double b = y_pred[i] - mp;
    stt += a * a;
    spp += b * b;
    stp += a * b;
  }
  if (stt > 0.0 && spp > 0.0) m.r2 = std::min(1.0, stp * stp / (stt * spp));
  return m;
}

SubsetResult make_subset_result(std::string subset, std::vector<std::string> ids, std::vector<double> y_true,
                                std::vector<double> y_pred, double huber_delta) {
  if (ids.size() != y_true.size() || y_true.size() != y_pred.size()) throw Error("report: subset columns differ in length");
  SubsetResult r;
  r.subset = std::move(subset);
  r.sample_id = std::move(ids);
  r.y_true = std::move(y_true);
  r.y_pred = std::move(y_pred);
  if (!r.y_true.empty()) r.metrics = evaluate(r.y_true, r.y_pred, huber_delta);
  return r;
}

ActivityStat parse_activity_stat(const std::string& name) {
  if (name == "l1") return ActivityStat::l1;
  if (name == "max") return ActivityStat::max;
  throw Error("unknown activity statistic \"" + name + "\" (expected l1 or max)");
}

std::size_t activation_offset(const CnnSpec& spec, int layer) {
  const auto half1 = static_cast<std::size_t>((spec.f1 - 1) / 2);
  if (layer == 1) return half1;
  if (layer == 2) return half1 + static_cast<std::size_t>((spec.f2 - 1) / 2);
  throw Error("activation layer must be 1 or 2");
}

std::vector<ActivationMap> top_kernel_activations(const CnnModel& model, std::span<const double> spectrum, int layer,
                                                  int k, ActivityStat stat) {
  if (k < 1) throw Error("top_kernel_activations: k must be at least 1");
  const CnnSpec& spec = model.spec();
  const std::size_t offset = activation_offset(spec, layer);
  const auto acts = layer_activations(model, spectrum);
  const std::vector<double>& values = layer == 1 ? acts.act1 : acts.act2;
  const auto kernels = static_cast<std::size_t>(layer == 1 ? spec.k1 : spec.k2);
  const auto len = static_cast<std::size_t>(layer == 1 ? spec.conv1_len() : spec.conv2_len());

  std::vector<ActivationMap> maps(kernels);
  for (std::size_t c = 0; c < kernels; ++c) {
    auto& m = maps[c];
    m.layer = layer;
    m.kernel = static_cast<int>(c);
    m.first_grid_index = offset;
    m.activation.assign(values.begin() + static_cast<std::ptrdiff_t>(c * len),
                        values.begin() + static_cast<std::ptrdiff_t>((c + 1) * len));
    if (stat == ActivityStat::l1) {
      m.score = std::accumulate(m.activation.begin(), m.activation.end(), 0.0);
    } else {
      m.score = *std::max_element(m.activation.begin(), m.activation.end());
    }
  }
  std::stable_sort(maps.begin(), maps.end(), [](const ActivationMap& a, const ActivationMap& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.kernel < b.kernel;
  });
  maps.resize(std::min(maps.size(), static_cast<std::size_t>(k)));
  return maps;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

void write_metrics_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "model,dataset,subset,n,r2,rmse,huber\n";
  for (const auto& s : report.subsets) {
    if (s.metrics.count == 0) continue;
    out << report.model_kind << ',' << report.dataset << ',' << s.subset << ',' << s.metrics.count << ','
        << (s.metrics.r2 ? detail::format_report(*s.metrics.r2) : std::string()) << ','
        << detail::format_report(s.metrics.rmse) << ',' << detail::format_report(s.metrics.huber) << '\n';
  }
  finish(out, path);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "model,dataset,subset,n,r2,rmse,huber") {
    throw Error(path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    const auto fail = [&] { return Error(path.string() + " line " + std::to_string(number) + ": malformed metrics row"); };
    if (f.size() != 7) throw fail();
    MetricsRow row;
    row.model_kind = f[0];
    row.dataset = f[1];
    row.subset = f[2];
    const auto n = detail::parse_double(f[3]);
    const auto rmse = detail::parse_double(f[5]);
    const auto hub = detail::parse_double(f[6]);
    if (!n || !rmse || !hub) throw fail();
    row.metrics.count = static_cast<std::size_t>(*n);
    if (!f[4].empty()) {
      const auto r2 = detail::parse_double(f[4]);
      if (!r2) throw fail();
      row.metrics.r2 = *r2;
    }
    row.metrics.rmse = *rmse;
    row.metrics.huber = *hub;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_scatter_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "subset,sample_id,y_true,y_pred\n";
  for (const auto& s : report.subsets) {
    for (std::size_t i = 0; i < s.y_true.size(); ++i) {
      out << s.subset << ',' << s.sample_id[i] << ',' << detail::format_report(s.y_true[i]) << ','
          << detail::format_report(s.y_pred[i]) << '\n';
    }
  }
  finish(out, path);
}

void write_activation_csv(const WavelengthGrid& grid, std::span<const double> spectrum,
                          const std::vector<ActivationMap>& maps, const std::filesystem::path& path) {
  if (spectrum.size() != grid.count) throw Error("activation export: spectrum length does not match the grid");
  for (const auto& m : maps) {
    if (m.first_grid_index + m.activation.size() > grid.count) throw Error("activation export: map exceeds the grid");
  }
  auto out = open_for_write(path);
  out << "wavelength_nm,spectrum";
  for (const auto& m : maps) out << ",layer" << m.layer << "_kernel" << m.kernel;
  out << '\n';
  for (std::size_t i = 0; i < grid.count; ++i) {
    out << detail::format_report(grid.at(i)) << ',' << detail::format_report(spectrum[i]);
    for (const auto& m : maps) {
      out << ',';
      if (i >= m.first_grid_index && i - m.first_grid_index < m.activation.size()) {
        out << detail::format_report(m.activation[i - m.first_grid_index]);
      }
    }
    out << '\n';
  }
  finish(out, path);
}

void export_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  write_metrics_csv(report, dir / "metrics.csv");
  write_scatter_csv(report, dir / "scatter.csv");
}

}  // namespace nirchem
