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


#include "nirchem/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "nirchem/rng.hpp"

namespace nirchem {

using nlohmann::json;

namespace {

constexpr const char* kPreparedDir = "prepared";
constexpr const char* kTuneDir = "tune";
constexpr const char* kModelDir = "model";
constexpr const char* kEvaluateDir = "evaluate";
constexpr const char* kActivationsDir = "activations";

template <typename F>
auto in_stage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what());
  } catch (const json::exception& e) {
    throw StageError(stage, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(stage, e.what());
  }
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

// Run time is kept out of every content file so reruns stay byte-identical.
void write_metadata(const std::filesystem::path& dir, const std::string& stage) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream stamp;
  stamp << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  write_file(dir / "metadata.json", json{{"stage", stage}, {"finished_utc", stamp.str()}}.dump(2) + "\n");
}

void write_manifest(const std::filesystem::path& dir, const json& manifest) {
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

json read_manifest(const std::filesystem::path& dir, const std::string& producer) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw Error("missing " + path.string() + "; run `" + producer + "` first");
  return json::parse(read_file(path));
}

void require_hash(const json& manifest, const std::string& key, const std::string& expected, const std::string& producer) {
  if (manifest.at(key).get<std::string>() != expected) {
    throw Error("outputs of `" + producer + "` are stale for this config; rerun `" + producer + "`");
  }
}

json synthetic_to_json(const SyntheticConfig& s) {
  return json{{"n_samples", s.n_samples},
              {"n_peaks", s.n_peaks},
              {"conc_low_mg", s.conc_low_mg},
              {"conc_high_mg", s.conc_high_mg},
              {"offset_amplitude", s.offset_amplitude},
              {"mult_amplitude", s.mult_amplitude},
              {"slope_amplitude", s.slope_amplitude},
              {"noise_std", s.noise_std},
              {"seed", s.seed},
              {"grid", {{"start_nm", s.grid.start_nm}, {"step_nm", s.grid.step_nm}, {"count", s.grid.count}}},
              {"tablet_mg", s.tablet_mg},
              {"baseline_absorbance", s.baseline_absorbance},
              {"interferent_scale", s.interferent_scale},
              {"instrument2_fraction", s.instrument2_fraction},
              {"instrument2_offset", s.instrument2_offset},
              {"instrument2_slope", s.instrument2_slope}};
}

SyntheticConfig synthetic_from_json(const json& j, std::uint64_t default_seed) {
  SyntheticConfig s;
  s.seed = default_seed;
  s.n_samples = j.value("n_samples", s.n_samples);
  s.n_peaks = j.value("n_peaks", s.n_peaks);
  s.conc_low_mg = j.value("conc_low_mg", s.conc_low_mg);
  s.conc_high_mg = j.value("conc_high_mg", s.conc_high_mg);
  s.offset_amplitude = j.value("offset_amplitude", s.offset_amplitude);
  s.mult_amplitude = j.value("mult_amplitude", s.mult_amplitude);
  s.slope_amplitude = j.value("slope_amplitude", s.slope_amplitude);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.seed = j.value("seed", s.seed);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    s.grid.start_nm = g.value("start_nm", s.grid.start_nm);
    s.grid.step_nm = g.value("step_nm", s.grid.step_nm);
    s.grid.count = g.value("count", s.grid.count);
  }
  s.tablet_mg = j.value("tablet_mg", s.tablet_mg);
  s.baseline_absorbance = j.value("baseline_absorbance", s.baseline_absorbance);
  s.interferent_scale = j.value("interferent_scale", s.interferent_scale);
  s.instrument2_fraction = j.value("instrument2_fraction", s.instrument2_fraction);
  s.instrument2_offset = j.value("instrument2_offset", s.instrument2_offset);
  s.instrument2_slope = j.value("instrument2_slope", s.instrument2_slope);
  return s;
}

// Normalized configs write unset optional values as null.
bool present(const json& j, const char* key) { return j.contains(key) && !j.at(key).is_null(); }

json optional_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }
json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Hash input for a subset of the normalized config.
std::string section_hash(const json& normalized, std::initializer_list<const char*> keys, const std::string& extra = {}) {
  json part = json::object();
  for (const char* k : keys) part[k] = normalized.at(k);
  return fnv1a_hex(part.dump() + extra);
}

std::vector<std::string> step_names(const std::vector<PreprocessStep>& steps) {
  std::vector<std::string> names;
  for (const auto s : steps) names.push_back(step_name(s));
  return names;
}

SpectraSet load_source(const PipelineConfig& config) {
  if (config.csv) return load_csv(*config.csv);
  return synthesize(*config.synthetic);
}

SpectraSet filter_out(const SpectraSet& set, const std::set<std::string>& removed) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!removed.contains(set.sample_id[i])) rows.push_back(i);
  }
  return set.subset(rows);
}

CvOptions outlier_cv_options(const PipelineConfig& config, const SpectraSet& set) {
  CvOptions cv;
  cv.folds = config.outliers.folds;
  cv.seed = mix_seed(config.seed, 6);
  const auto n = static_cast<int>(set.size());
  const int smallest_fold_train = n - (n + cv.folds - 1) / cv.folds;
  cv.range.high = std::max(1, std::min({config.outliers.max_components, static_cast<int>(set.grid.count), smallest_fold_train - 1}));
  return cv;
}

std::vector<std::string> find_outliers(const PipelineConfig& config, const SpectraSet& set, std::ostream& log) {
  std::vector<std::string> removed;
  const auto run = [&](const SpectraSet& pool, const std::string& label) {
    const auto result = remove_outliers(pool, config.outliers.sigma, outlier_cv_options(config, pool));
    log << "outliers (" << label << "): " << result.removed.size() << " removed with " << result.components
        << " components\n";
    removed.insert(removed.end(), result.removed.begin(), result.removed.end());
  };
  if (config.outliers.scope == "global") {
    run(set, "global");
  } else {
    for (const int instrument : {1, 2}) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.instrument[i] == instrument) rows.push_back(i);
      }
      if (rows.empty()) continue;
      run(set.subset(rows), "instrument " + std::to_string(instrument));
    }
  }
  return removed;
}

std::filesystem::path stage_dir(const PipelineConfig& config, const char* name) { return config.output_dir / name; }

CnnSpec resolve_spec(const PipelineConfig& config, std::size_t input_len) {
  if (config.model.spec) {
    CnnSpec spec = *config.model.spec;
    spec.input_len = static_cast<int>(input_len);
    return spec;
  }
  const auto dir = stage_dir(config, kTuneDir);
  const json manifest = read_manifest(dir, "tune");
  require_hash(manifest, "tune_hash", tune_hash(config), "tune");
  return spec_from_json(read_file(dir / "best_spec.json"));
}

std::vector<double> predictions_for(const TrainOutcome& model, const SpectraSet& set) {
  if (set.size() == 0) return {};
  if (model.cnn) return predict(*model.cnn, set.absorbance);
  const Vector p = pls_predict(*model.pls, set.absorbance);
  return {p.begin(), p.end()};
}

TrainOutcome load_trained(const PipelineConfig& config) {
  const auto dir = stage_dir(config, kModelDir);
  const json manifest = read_manifest(dir, "train");
  require_hash(manifest, "train_hash", train_hash(config), "train");
  TrainOutcome out;
  if (config.model.kind == "cnn") {
    out.cnn = load_model(dir / "model.nircnn");
  } else {
    out.pls = pls_from_json(read_file(dir / "pls.json"));
  }
  return out;
}

}  // namespace

bool PipelineConfig::augmented() const {
  return std::find(preprocessing.begin(), preprocessing.end(), PreprocessStep::augment) != preprocessing.end();
}

void PipelineConfig::validate() const {
  if (csv.has_value() == synthetic.has_value()) throw Error("config: dataset needs exactly one of \"csv\" or \"synthetic\"");
  if (synthetic) synthetic->validate();
  if (region_nm && !(region_nm->first < region_nm->second)) throw Error("config: region_nm needs low < high");
  if (outliers.scope != "global" && outliers.scope != "per_instrument") {
    throw Error("config: outliers.scope must be \"global\" or \"per_instrument\"");
  }
  if (!(outliers.sigma > 0.0)) throw Error("config: outliers.sigma must be positive");
  if (outliers.folds < 2) throw Error("config: outliers.folds must be at least 2");
  if (split.scheme != "standard" && split.scheme != "extrapolation") {
    throw Error("config: split.scheme must be \"standard\" or \"extrapolation\"");
  }
  PreprocessChain chain;
  chain.steps = preprocessing;
  chain.validate_order();
  augment.validate();
  if (emsc_order < 0) throw Error("config: emsc.order must be non-negative");
  if (model.kind != "cnn" && model.kind != "pls") throw Error("config: model.kind must be \"cnn\" or \"pls\"");
  if (model.spec) model.spec->validate();
  if (model.pls.max_components < 1 || model.pls.folds < 2) throw Error("config: invalid model.pls settings");
  if (hyperopt.n_init < 2 || hyperopt.n_iter < 0 || hyperopt.candidates < 1) throw Error("config: invalid hyperopt budget");
  if (activations.top < 1) throw Error("config: activations.top must be at least 1");
  tuning_train_config(*this).validate();
  final_train_config(*this).validate();
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                            std::optional<std::uint64_t> seed_override) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    c.name = j.value("name", c.name);
    c.seed = seed_override.value_or(j.value("seed", c.seed));
    c.output_dir = j.value("output_dir", c.output_dir.string());
    if (!j.contains("dataset")) throw Error("config: missing \"dataset\"");
    const auto& d = j.at("dataset");
    if (d.contains("csv")) {
      std::filesystem::path p = d.at("csv").get<std::string>();
      c.csv = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    if (d.contains("synthetic")) c.synthetic = synthetic_from_json(d.at("synthetic"), c.seed);
    if (present(j, "region_nm")) {
      const auto r = j.at("region_nm").get<std::vector<double>>();
      if (r.size() != 2) throw Error("config: region_nm must be [low, high]");
      c.region_nm = std::pair{r[0], r[1]};
    }
    if (j.contains("outliers")) {
      const auto& o = j.at("outliers");
      c.outliers.enabled = o.value("enabled", c.outliers.enabled);
      c.outliers.sigma = o.value("sigma", c.outliers.sigma);
      c.outliers.scope = o.value("scope", c.outliers.scope);
      c.outliers.folds = o.value("folds", c.outliers.folds);
      c.outliers.max_components = o.value("max_components", c.outliers.max_components);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.scheme = s.value("scheme", c.split.scheme);
      c.split.test_fraction = s.value("test_fraction", c.split.test_fraction);
      c.split.val_fraction = s.value("val_fraction", c.split.val_fraction);
      c.split.train_below_mg = s.value("train_below_mg", c.split.train_below_mg);
      c.split.val_upper_mg = s.value("val_upper_mg", c.split.val_upper_mg);
    }
    for (const auto& name : j.value("preprocessing", std::vector<std::string>{})) c.preprocessing.push_back(parse_step(name));
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      c.augment.offset_scale = a.value("offset_scale", c.augment.offset_scale);
      c.augment.mult_scale = a.value("mult_scale", c.augment.mult_scale);
      c.augment.slope_low = a.value("slope_low", c.augment.slope_low);
      c.augment.slope_high = a.value("slope_high", c.augment.slope_high);
      c.augment.copies = a.value("copies", c.augment.copies);
    }
    c.augment.seed = mix_seed(c.seed, 2);
    if (j.contains("emsc")) c.emsc_order = j.at("emsc").value("order", c.emsc_order);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.kind = m.value("kind", c.model.kind);
      if (present(m, "spec")) {
        json spec = m.at("spec");
        if (!spec.contains("input_len")) spec["input_len"] = 0;
        c.model.spec = spec_from_json(spec.dump());
        if (c.model.spec->input_len == 0) c.model.spec->input_len = c.model.spec->f1 + c.model.spec->f2;
      }
      if (m.contains("train")) {
        const auto& t = m.at("train");
        auto& s = c.model.train;
        if (present(t, "tune_epochs")) s.tune_epochs = t.at("tune_epochs").get<int>();
        if (present(t, "epochs")) s.epochs = t.at("epochs").get<int>();
        if (present(t, "learning_rate")) s.learning_rate = t.at("learning_rate").get<double>();
        if (present(t, "plateau_patience")) s.plateau_patience = t.at("plateau_patience").get<int>();
        s.plateau_factor = t.value("plateau_factor", s.plateau_factor);
        s.batch_size = t.value("batch_size", s.batch_size);
        s.noise_std = t.value("noise_std", s.noise_std);
      }
      if (m.contains("pls")) {
        const auto& p = m.at("pls");
        c.model.pls.strategy = parse_strategy(p.value("strategy", strategy_name(c.model.pls.strategy)));
        c.model.pls.max_components = p.value("max_components", c.model.pls.max_components);
        c.model.pls.folds = p.value("folds", c.model.pls.folds);
      }
    }
    if (j.contains("hyperopt")) {
      const auto& h = j.at("hyperopt");
      c.hyperopt.n_init = h.value("n_init", c.hyperopt.n_init);
      c.hyperopt.n_iter = h.value("n_iter", c.hyperopt.n_iter);
      c.hyperopt.candidates = h.value("candidates", c.hyperopt.candidates);
    }
    if (j.contains("activations")) {
      const auto& a = j.at("activations");
      c.activations.sample = a.value("sample", c.activations.sample);
      c.activations.top = a.value("top", c.activations.top);
      c.activations.stat = parse_activity_stat(a.value("stat", std::string("l1")));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  return parse_config(read_file(path), path.parent_path(), seed_override);
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["dataset"] = c.csv ? json{{"csv", c.csv->string()}} : json{{"synthetic", synthetic_to_json(*c.synthetic)}};
  j["region_nm"] = c.region_nm ? json{c.region_nm->first, c.region_nm->second} : json(nullptr);
  j["outliers"] = {{"enabled", c.outliers.enabled},
                   {"sigma", c.outliers.sigma},
                   {"scope", c.outliers.scope},
                   {"folds", c.outliers.folds},
                   {"max_components", c.outliers.max_components}};
  j["split"] = {{"scheme", c.split.scheme},
                {"test_fraction", c.split.test_fraction},
                {"val_fraction", c.split.val_fraction},
                {"train_below_mg", c.split.train_below_mg},
                {"val_upper_mg", c.split.val_upper_mg}};
  j["preprocessing"] = step_names(c.preprocessing);
  j["augment"] = {{"offset_scale", c.augment.offset_scale},
                  {"mult_scale", c.augment.mult_scale},
                  {"slope_low", c.augment.slope_low},
                  {"slope_high", c.augment.slope_high},
                  {"copies", c.augment.copies}};
  j["emsc"] = {{"order", c.emsc_order}};
  const auto& t = c.model.train;
  j["model"] = {{"kind", c.model.kind},
                {"spec", c.model.spec ? json::parse(spec_to_json(*c.model.spec)) : json(nullptr)},
                {"train",
                 {{"tune_epochs", optional_json(t.tune_epochs)},
                  {"epochs", optional_json(t.epochs)},
                  {"learning_rate", optional_json(t.learning_rate)},
                  {"plateau_patience", optional_json(t.plateau_patience)},
                  {"plateau_factor", t.plateau_factor},
                  {"batch_size", t.batch_size},
                  {"noise_std", t.noise_std}}},
                {"pls",
                 {{"strategy", strategy_name(c.model.pls.strategy)},
                  {"max_components", c.model.pls.max_components},
                  {"folds", c.model.pls.folds}}}};
  j["hyperopt"] = {{"n_init", c.hyperopt.n_init}, {"n_iter", c.hyperopt.n_iter}, {"candidates", c.hyperopt.candidates}};
  j["activations"] = {{"sample", c.activations.sample},
                      {"top", c.activations.top},
                      {"stat", c.activations.stat == ActivityStat::l1 ? "l1" : "max"}};
  return j.dump(2);
}

std::string prepare_hash(const PipelineConfig& config) {
  const json n = json::parse(config_to_json(config));
  return section_hash(n, {"seed", "dataset", "region_nm", "outliers", "split", "preprocessing", "augment", "emsc"});
}

std::string tune_hash(const PipelineConfig& config) {
  json n = json::parse(config_to_json(config));
  // Only the settings that reach the tuning objective.
  json train = n["model"]["train"];
  train.erase("epochs");
  train.erase("plateau_patience");
  train.erase("plateau_factor");
  n["tune_train"] = train;
  return section_hash(n, {"hyperopt", "tune_train"}, prepare_hash(config));
}

std::string train_hash(const PipelineConfig& config) {
  const json n = json::parse(config_to_json(config));
  std::string upstream = prepare_hash(config);
  if (config.model.kind == "cnn" && !config.model.spec) upstream += tune_hash(config);
  return section_hash(n, {"model"}, upstream);
}

std::uint64_t split_seed(const PipelineConfig& config) { return mix_seed(config.seed, 1); }
std::uint64_t init_seed(const PipelineConfig& config) { return mix_seed(config.seed, 4); }
std::uint64_t train_seed(const PipelineConfig& config) { return mix_seed(config.seed, 3); }

TrainConfig tuning_train_config(const PipelineConfig& config) {
  const bool da = config.augmented();
  const auto& s = config.model.train;
  TrainConfig t;
  t.learning_rate = s.learning_rate.value_or(da ? 0.084 : 0.094);
  t.batch_size = s.batch_size;
  t.epochs = s.tune_epochs.value_or(da ? 40 : 200);
  t.plateau_patience = 1;
  t.plateau_factor = 1.0;  // constant rate while tuning
  t.seed = train_seed(config);
  return t;
}

TrainConfig final_train_config(const PipelineConfig& config) {
  const bool da = config.augmented();
  const auto& s = config.model.train;
  TrainConfig t;
  t.learning_rate = s.learning_rate.value_or(da ? 0.084 : 0.094);
  t.batch_size = s.batch_size;
  t.epochs = s.epochs.value_or(da ? 100 : 250);
  t.plateau_patience = s.plateau_patience.value_or(da ? 10 : 25);
  t.plateau_factor = s.plateau_factor;
  t.seed = train_seed(config);
  return t;
}

std::string format_sizes(const PipelineConfig& config, const DataSplits& splits) {
  std::string chain;
  for (const auto s : config.preprocessing) chain += (chain.empty() ? "" : " + ") + step_name(s);
  if (chain.empty()) chain = "none";
  std::ostringstream out;
  out << std::left << std::setw(16) << "Dataset" << std::setw(20) << "Preprocessing" << std::right << std::setw(10)
      << "Training" << std::setw(12) << "Validation" << std::setw(8) << "Test" << '\n'
      << std::left << std::setw(16) << config.name << std::setw(20) << chain << std::right << std::setw(10)
      << splits.train.size() << std::setw(12) << splits.validation.size() << std::setw(8) << splits.test.size() << '\n';
  return out.str();
}

PreparedData run_prepare(const PipelineConfig& config, std::ostream& log) {
  PreparedData out;
  SpectraSet data = in_stage("prepare/load", [&] { return load_source(config); });
  if (config.region_nm) {
    data = in_stage("prepare/region", [&] { return restrict_region(data, config.region_nm->first, config.region_nm->second); });
  }
  if (config.outliers.enabled) {
    out.removed = in_stage("prepare/outliers", [&] { return find_outliers(config, data, log); });
    data = filter_out(data, std::set<std::string>(out.removed.begin(), out.removed.end()));
  }
  const DataSplits raw = in_stage("prepare/split", [&] {
    if (config.split.scheme == "standard") {
      return standard_split(data, config.split.test_fraction, config.split.val_fraction, split_seed(config));
    }
    return extrapolation_split(data, config.split.train_below_mg, config.split.val_upper_mg);
  });
  out.chain.steps = config.preprocessing;
  out.chain.augment_config = config.augment;
  out.chain.emsc_order = config.emsc_order;
  out.splits = in_stage("prepare/preprocess", [&] { return fit_chain(out.chain, raw); });

  in_stage("prepare/write", [&] {
    const auto dir = stage_dir(config, kPreparedDir);
    ensure_dir(dir);
    save_csv(out.splits.train, dir / "train.csv");
    save_csv(out.splits.validation, dir / "validation.csv");
    save_csv(out.splits.test, dir / "test.csv");
    write_file(dir / "chain.json", chain_to_json(out.chain) + "\n");
    std::string removed;
    for (const auto& id : out.removed) removed += id + "\n";
    write_file(dir / "outliers.txt", removed);
    json params = json::object();
    for (const auto& [k, v] : raw.provenance.parameters) params[k] = v;
    write_manifest(dir, {{"stage", "prepare"},
                         {"prepare_hash", prepare_hash(config)},
                         {"grid_count", out.splits.test.grid.count},
                         {"split", {{"scheme", raw.provenance.scheme}, {"parameters", params}, {"seed", raw.provenance.seed}}},
                         {"sizes",
                          {{"train", out.splits.train.size()},
                           {"validation", out.splits.validation.size()},
                           {"test", out.splits.test.size()}}}});
    write_metadata(dir, "prepare");
    return 0;
  });
  log << format_sizes(config, out.splits);
  return out;
}

PreparedData load_prepared(const PipelineConfig& config) {
  const auto dir = stage_dir(config, kPreparedDir);
  const json manifest = read_manifest(dir, "prepare");
  require_hash(manifest, "prepare_hash", prepare_hash(config), "prepare");
  PreparedData out;
  out.splits.train = load_csv(dir / "train.csv");
  out.splits.validation = load_csv(dir / "validation.csv");
  const auto test_path = dir / "test.csv";
  if (!std::filesystem::exists(test_path)) throw Error("missing test subset " + test_path.string());
  out.splits.test = load_csv(test_path);
  out.chain = chain_from_json(read_file(dir / "chain.json"));
  return out;
}

TuneOutcome run_tune(const PipelineConfig& config, std::ostream& log) {
  if (config.model.kind != "cnn") throw StageError("tune", "tuning applies to cnn models only");
  const PreparedData data = in_stage("tune/load", [&] { return load_prepared(config); });
  const int input_len = static_cast<int>(data.splits.train.grid.count);
  const TrainConfig train_config = tuning_train_config(config);
  const auto dir = stage_dir(config, kTuneDir);
  const auto trace_path = dir / "trace.jsonl";

  return in_stage("tune", [&] {
    ensure_dir(dir);
    const std::string hash = tune_hash(config);
    const auto manifest_path = dir / "manifest.json";
    if (std::filesystem::exists(manifest_path)) {
      const json previous = json::parse(read_file(manifest_path));
      if (previous.value("tune_hash", std::string()) != hash) std::filesystem::remove(trace_path);
    } else {
      std::filesystem::remove(trace_path);
    }
    json manifest{{"stage", "tune"}, {"tune_hash", hash}, {"complete", false}};
    write_manifest(dir, manifest);

    std::size_t trial_number = 0;
    const Objective objective = [&](const std::vector<double>& point) {
      ++trial_number;
      const CnnSpec spec = spec_from_point(point, input_len, config.model.train.noise_std);
      spec.validate();
      CnnModel model = CnnModel::build(spec, init_seed(config));
      const TrainHistory h = train(model, data.splits.train, data.splits.validation, train_config);
      if (h.aborted) {
        log << "trial " << trial_number << ": aborted (" << h.abort_reason << ")\n";
        return std::numeric_limits<double>::quiet_NaN();
      }
      const double score = tail_mean_val_loss(h, 10);
      log << "trial " << trial_number << ": " << spec_to_json(spec) << " -> " << score << '\n';
      return score;
    };
    OptimizeOptions options;
    options.n_init = config.hyperopt.n_init;
    options.n_iter = config.hyperopt.n_iter;
    options.candidates = config.hyperopt.candidates;
    options.seed = mix_seed(config.seed, 5);
    options.trace_path = trace_path;
    TuneOutcome out;
    out.result = optimize(cnn_search_space(), objective, options);
    out.best = spec_from_point(out.result.best.params, input_len, config.model.train.noise_std);
    write_file(dir / "best_spec.json", spec_to_json(out.best) + "\n");
    write_convergence_csv(out.result.trace, dir / "convergence.csv");
    manifest["complete"] = true;
    manifest["best_objective"] = out.result.best.objective;
    manifest["trials"] = out.result.trace.size();
    write_manifest(dir, manifest);
    write_metadata(dir, "tune");
    log << "best " << spec_to_json(out.best) << " objective " << out.result.best.objective << '\n';
    return out;
  });
}

TrainOutcome run_train(const PipelineConfig& config, std::ostream& log) {
  const PreparedData data = in_stage("train/load", [&] { return load_prepared(config); });
  const auto dir = stage_dir(config, kModelDir);
  TrainOutcome out;
  if (config.model.kind == "pls") {
    in_stage("train/pls", [&] {
      const SpectraSet pooled = concat(data.splits.train, data.splits.validation);
      CvOptions cv;
      cv.folds = config.model.pls.folds;
      cv.seed = mix_seed(config.seed, 7);
      const auto n = static_cast<int>(pooled.size());
      const int smallest_fold_train = n - (n + cv.folds - 1) / cv.folds;
      cv.range.high = std::max(1, std::min({config.model.pls.max_components, static_cast<int>(pooled.grid.count),
                                            smallest_fold_train - 1}));
      const auto selection = select_components(pooled, data.splits.test, config.model.pls.strategy, cv);
      out.pls = pls_fit(as_matrix(pooled), as_vector(pooled.reference_mg), selection.components, cv.nipals);
      ensure_dir(dir);
      write_file(dir / "pls.json", pls_to_json(*out.pls) + "\n");
      write_cv_curve_csv(selection.curve, dir / "cv_curve.csv");
      log << "pls: " << selection.components << " components (" << strategy_name(config.model.pls.strategy) << ")\n";
      return 0;
    });
  } else {
    const CnnSpec spec = in_stage("train/spec", [&] { return resolve_spec(config, data.splits.train.grid.count); });
    in_stage("train/cnn", [&] {
      CnnModel model = CnnModel::build(spec, init_seed(config));
      out.history = train(model, data.splits.train, data.splits.validation, final_train_config(config));
      if (out.history.aborted) throw Error("training aborted at " + out.history.abort_reason);
      ensure_dir(dir);
      save_model(model, dir / "model.nircnn");
      write_history_csv(out.history, dir / "history.csv");
      log << "cnn: " << out.history.epochs() << " epochs, final val loss " << out.history.val_loss.back() << '\n';
      out.cnn = std::move(model);
      return 0;
    });
  }
  in_stage("train/write", [&] {
    write_manifest(dir, {{"stage", "train"},
                         {"kind", config.model.kind},
                         {"train_hash", train_hash(config)},
                         {"prepare_hash", prepare_hash(config)}});
    write_metadata(dir, "train");
    return 0;
  });
  return out;
}

EvalReport run_evaluate(const PipelineConfig& config, std::ostream& log) {
  const PreparedData data = in_stage("evaluate/load", [&] { return load_prepared(config); });
  const TrainOutcome model = in_stage("evaluate/model", [&] { return load_trained(config); });
  return in_stage("evaluate", [&] {
    const std::size_t expected = data.splits.test.grid.count;
    const std::size_t actual = model.cnn ? static_cast<std::size_t>(model.cnn->spec().input_len)
                                         : static_cast<std::size_t>(model.pls->x_mean.size());
    if (expected != actual) {
      throw Error("model expects " + std::to_string(actual) + " wavelengths but the dataset has " + std::to_string(expected));
    }
    const SpectraSet pooled = concat(data.splits.train, data.splits.validation);
    EvalReport report;
    report.model_kind = config.model.kind;
    report.dataset = config.name;
    report.subsets.push_back(make_subset_result("train", pooled.sample_id, pooled.reference_mg, predictions_for(model, pooled)));
    report.subsets.push_back(make_subset_result("test", data.splits.test.sample_id, data.splits.test.reference_mg,
                                                predictions_for(model, data.splits.test)));
    const auto dir = stage_dir(config, kEvaluateDir);
    export_report(report, dir);
    write_metadata(dir, "evaluate");
    for (const auto& s : report.subsets) {
      log << s.subset << ": n=" << s.metrics.count << " r2="
          << (s.metrics.r2 ? std::to_string(*s.metrics.r2) : std::string("NA")) << " rmse=" << s.metrics.rmse
          << " huber=" << s.metrics.huber << '\n';
    }
    return report;
  });
}

std::vector<ActivationMap> run_activations(const PipelineConfig& config, std::ostream& log) {
  if (config.model.kind != "cnn") throw StageError("activations", "kernel activations require a cnn model");
  const PreparedData data = in_stage("activations/load", [&] { return load_prepared(config); });
  const TrainOutcome model = in_stage("activations/model", [&] { return load_trained(config); });
  return in_stage("activations", [&] {
    const auto& test = data.splits.test;
    if (config.activations.sample >= test.size()) {
      throw Error("sample " + std::to_string(config.activations.sample) + " outside the test subset of " +
                  std::to_string(test.size()));
    }
    const auto row = static_cast<Eigen::Index>(config.activations.sample);
    const std::vector<double> spectrum(test.absorbance.row(row).begin(), test.absorbance.row(row).end());
    const auto dir = stage_dir(config, kActivationsDir);
    ensure_dir(dir);
    std::vector<ActivationMap> all;
    for (const int layer : {1, 2}) {
      auto maps = top_kernel_activations(*model.cnn, spectrum, layer, config.activations.top, config.activations.stat);
      write_activation_csv(test.grid, spectrum, maps, dir / ("layer" + std::to_string(layer) + ".csv"));
      log << "layer " << layer << ":";
      for (const auto& m : maps) log << " kernel " << m.kernel << " (" << m.score << ")";
      log << '\n';
      all.insert(all.end(), maps.begin(), maps.end());
    }
    write_metadata(dir, "activations");
    return all;
  });
}

SpectraSet run_synth(const PipelineConfig& config, std::ostream& log) {
  return in_stage("synth", [&] {
    if (!config.synthetic) throw Error("config has no synthetic dataset section");
    SpectraSet set = synthesize(*config.synthetic);
    ensure_dir(config.output_dir);
    const auto path = config.output_dir / "synthetic.csv";
    save_csv(set, path);
    log << "wrote " << set.size() << " spectra x " << set.grid.count << " wavelengths to " << path.string() << '\n';
    return set;
  });
}

}  // namespace nirchem
