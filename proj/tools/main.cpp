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


#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nirchem/pipeline.hpp"
#include "nirchem/simd.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> isa;
};

nirchem::PipelineConfig resolve(const GlobalFlags& flags) {
  auto config = nirchem::load_config(flags.config, flags.seed);
  if (flags.out) config.output_dir = *flags.out;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nirchem: NIR spectra regression with PLS and 1-D CNNs"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config, "Pipeline JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "Override the base seed");
  app.add_option("--out", flags.out, "Override the output directory");
  app.add_option("--isa", flags.isa, "Kernel set: scalar, avx2 or neon");

  auto* prepare = app.add_subcommand("prepare", "Outlier removal, splitting and preprocessing");
  auto* tune = app.add_subcommand("tune", "Bayesian optimization of the CNN architecture");
  std::optional<int> n_init;
  std::optional<int> n_iter;
  tune->add_option("--n-init", n_init, "Random initial trials");
  tune->add_option("--n-iter", n_iter, "Surrogate-guided trials");
  auto* train = app.add_subcommand("train", "Final model training");
  std::optional<int> epochs;
  train->add_option("--epochs", epochs, "Override the epoch budget");
  auto* evaluate = app.add_subcommand("evaluate", "Metrics and scatter data");
  auto* activations = app.add_subcommand("activations", "Most active convolution kernels for one test spectrum");
  std::optional<std::size_t> sample;
  std::optional<int> top;
  std::optional<std::string> stat;
  activations->add_option("--sample", sample, "Row of the test subset");
  activations->add_option("--top", top, "Kernels per layer");
  activations->add_option("--stat", stat, "Activity statistic: l1 or max");
  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset as CSV");

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (flags.isa) nirchem::simd::set_active(nirchem::simd::parse_isa(*flags.isa));
    auto config = resolve(flags);
    if (n_init) config.hyperopt.n_init = *n_init;
    if (n_iter) config.hyperopt.n_iter = *n_iter;
    if (epochs) config.model.train.epochs = *epochs;
    if (sample) config.activations.sample = *sample;
    if (top) config.activations.top = *top;
    if (stat) config.activations.stat = nirchem::parse_activity_stat(*stat);
    config.validate();

    if (prepare->parsed()) {
      nirchem::run_prepare(config, std::cout);
    } else if (tune->parsed()) {
      nirchem::run_tune(config, std::cout);
    } else if (train->parsed()) {
      nirchem::run_train(config, std::cout);
    } else if (evaluate->parsed()) {
      nirchem::run_evaluate(config, std::cout);
    } else if (activations->parsed()) {
      nirchem::run_activations(config, std::cout);
    } else if (synth->parsed()) {
      nirchem::run_synth(config, std::cout);
    }
  } catch (const nirchem::StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
