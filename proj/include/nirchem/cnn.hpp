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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nirchem/dataset.hpp"
#include "nirchem/rng.hpp"

namespace nirchem {

// Architecture hyperparameters of the 1-D regressor:
//   noise -> conv(k1, f1) + ReLU -> conv(k2, f2) + ReLU -> flatten -> dropout
//   -> dense(dense_units, linear) -> dense(1, linear)
// Convolutions are valid (no padding) with stride one.
struct CnnSpec {
  int k1 = 14;
  int f1 = 29;
  int k2 = 30;
  int f2 = 22;
  double dropout_rate = 0.0;
  int dense_units = 176;
  double noise_std = 0.01;
  int input_len = 600;

  int conv1_len() const { return input_len - f1 + 1; }
  int conv2_len() const { return conv1_len() - f2 + 1; }
  int flatten_len() const { return k2 * conv2_len(); }

  // Structural validity: positive sizes, f1 + f2 <= input_len,
  // dropout in [0, 1), noise_std >= 0.
  void validate() const;

  // True when every hyperparameter lies inside the tuning search space.
  bool within_search_space() const;

  bool operator==(const CnnSpec&) const = default;
};

std::string spec_to_json(const CnnSpec& spec);
CnnSpec spec_from_json(const std::string& text);

// Parameter tensors in declaration (and serialization) order.
enum class Tensor { conv1_w, conv1_b, conv2_w, conv2_b, dense_w, dense_b, out_w, out_b };
inline constexpr std::size_t kTensorCount = 8;

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Shapes: conv1_w {k1, 1, f1}, conv2_w {k2, k1, f2}, dense_w {dense_units,
// k2 * L2} (one row per unit), out_w {dense_units}; biases are vectors.
std::vector<TensorInfo> parameter_layout(const CnnSpec& spec);

class CnnModel {
 public:
  // Glorot-uniform weights, zero biases.
  static CnnModel build(const CnnSpec& spec, std::uint64_t seed);

  // Model with the given flat parameter vector (layout per parameter_layout).
  CnnModel(const CnnSpec& spec, std::vector<double> params);

  const CnnSpec& spec() const { return spec_; }
  const std::vector<TensorInfo>& layout() const { return layout_; }

  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() {
    ++revision_;
    return params_;
  }

  std::span<const double> tensor(Tensor t) const;
  std::span<double> mutable_tensor(Tensor t);

  // Incremented on every mutable access; forward caches record it so a cache
  // cannot be used against different weights.
  std::uint64_t revision() const { return revision_; }

 private:
  CnnSpec spec_;
  std::vector<TensorInfo> layout_;
  std::vector<double> params_;
  std::uint64_t revision_ = 0;
};

enum class Mode { train, infer };

// Intermediate values of one sample, kept for the backward pass.
struct SampleCache {
  std::vector<double> input;    // after additive noise
  std::vector<double> act1;     // k1 x L1, post-ReLU
  std::vector<double> act2;     // k2 x L2, post-ReLU
  std::vector<double> mask;     // dropout scale per flattened unit (0 or 1/(1-rate))
  std::vector<double> dropped;  // act2 * mask
  std::vector<double> hidden;   // dense layer output
  double output = 0.0;
};

struct ForwardCache {
  std::uint64_t revision = 0;
  Mode mode = Mode::infer;
  std::vector<SampleCache> samples;
};

struct ForwardResult {
  std::vector<double> predictions;
  ForwardCache cache;
};

// `rng` is required in train mode (noise and dropout) and ignored in infer
// mode, which is deterministic.
ForwardResult forward(const CnnModel& model, const Matrix& batch, Mode mode, Rng* rng = nullptr);

// Re-runs a forward pass with the noise and dropout masks stored in `cache`.
// Used for finite-difference checks of backward().
std::vector<double> replay_forward(const CnnModel& model, const ForwardCache& cache);

// Valid multi-channel 1-D convolution without activation:
// out[o][j] = bias[o] + sum_c sum_k w[o][c][k] in[c][j + k].
std::vector<double> conv1d_valid(std::span<const double> input, std::size_t in_channels,
                                 std::span<const double> weights, std::span<const double> bias,
                                 std::size_t out_channels, std::size_t taps);

struct Gradients {
  std::vector<double> values;  // same layout as CnnModel::params()
};

// Gradient of the mean Huber loss over the cached batch.
Gradients backward(const CnnModel& model, const ForwardCache& cache, std::span<const double> targets,
                   double huber_delta);

struct AdadeltaState {
  std::vector<double> grad_sq;    // running E[g^2]
  std::vector<double> update_sq;  // running E[u^2]

  explicit AdadeltaState(std::size_t n = 0) : grad_sq(n, 0.0), update_sq(n, 0.0) {}
};

// One Adadelta update (see simd::KernelTable::adadelta). Throws
// nirchem::Error on a non-finite gradient without touching the weights.
void adadelta_step(std::span<double> weights, std::span<const double> gradients, AdadeltaState& state, double lr,
                   double rho, double epsilon);
void adadelta_step(CnnModel& model, const Gradients& gradients, AdadeltaState& state, double lr, double rho,
                   double epsilon);

struct TrainConfig {
  double learning_rate = 0.084;
  int batch_size = 45;
  int epochs = 100;
  int plateau_patience = 10;
  double plateau_factor = 0.5;
  double rho = 0.95;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double huber_delta = 1.0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> learning_rate;  // rate used during the epoch
  bool aborted = false;
  std::string abort_reason;

  std::size_t epochs() const { return val_loss.size(); }
};

// Reduces the learning rate by `factor` once the observed loss has failed to
// improve (strictly) on its best value for `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double learning_rate, int patience, double factor);

  double learning_rate() const { return learning_rate_; }
  void observe(double loss);

 private:
  double learning_rate_;
  int patience_;
  double factor_;
  double best_;
  int wait_ = 0;
};

// Mini-batch training with per-epoch reshuffling. Losses are recorded in
// infer mode after every epoch. A non-finite loss stops training and is
// reported through TrainHistory::aborted.
TrainHistory train(CnnModel& model, const SpectraSet& train_set, const SpectraSet& val_set, const TrainConfig& config);

std::vector<double> predict(const CnnModel& model, const Matrix& x, std::size_t batch_size = 64);

// Mean of the last `window` validation losses (all epochs if fewer).
double tail_mean_val_loss(const TrainHistory& history, std::size_t window = 10);

// Post-ReLU outputs of both convolutional layers in infer mode.
struct LayerActivations {
  std::vector<double> act1;  // k1 x L1
  std::vector<double> act2;  // k2 x L2
};
LayerActivations layer_activations(const CnnModel& model, std::span<const double> spectrum);

void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace nirchem
