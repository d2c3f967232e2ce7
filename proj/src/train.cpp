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


#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "nirchem/cnn.hpp"
#include "nirchem/error.hpp"
#include "nirchem/loss.hpp"
#include "text.hpp"

namespace nirchem {

double huber(std::span<const double> residuals, double delta) {
  if (residuals.empty()) throw Error("huber: empty residual vector");
  if (!(delta > 0.0)) throw Error("huber: delta must be positive");
  double sum = 0.0;
  for (const double r : residuals) {
    const double a = std::abs(r);
    sum += a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
  }
  return sum / static_cast<double>(residuals.size());
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train config: learning rate must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw Error("train config: plateau factor must lie in (0, 1]");
  if (batch_size < 1) throw Error("train config: batch size must be at least 1");
  if (epochs < 0) throw Error("train config: epochs must be non-negative");
  if (plateau_patience < 1) throw Error("train config: plateau patience must be at least 1");
  if (!(rho > 0.0 && rho < 1.0) || !(epsilon > 0.0)) throw Error("train config: invalid Adadelta constants");
  if (!(huber_delta > 0.0)) throw Error("train config: huber delta must be positive");
}

PlateauScheduler::PlateauScheduler(double learning_rate, int patience, double factor)
    : learning_rate_(learning_rate), patience_(patience), factor_(factor), best_(std::numeric_limits<double>::infinity()) {}

void PlateauScheduler::observe(double loss) {
  if (loss < best_) {
    best_ = loss;
    wait_ = 0;
    return;
  }
  if (++wait_ >= patience_) {
    learning_rate_ *= factor_;
    wait_ = 0;
  }
}

std::vector<double> predict(const CnnModel& model, const Matrix& x, std::size_t batch_size) {
  if (x.cols() != model.spec().input_len) {
    throw Error("predict: spectra have " + std::to_string(x.cols()) + " points but the model expects " +
                std::to_string(model.spec().input_len));
  }
  if (batch_size == 0) throw Error("predict: batch size must be positive");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index start = 0; start < x.rows(); start += static_cast<Eigen::Index>(batch_size)) {
    const Eigen::Index rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_size), x.rows() - start);
    const Matrix batch = x.middleRows(start, rows);
    const auto result = forward(model, batch, Mode::infer);
    out.insert(out.end(), result.predictions.begin(), result.predictions.end());
  }
  return out;
}

namespace {

double set_loss(const CnnModel& model, const SpectraSet& set, double delta) {
  const auto pred = predict(model, set.absorbance);
  std::vector<double> residuals(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) residuals[i] = pred[i] - set.reference_mg[i];
  return huber(residuals, delta);
}

}  // namespace

TrainHistory train(CnnModel& model, const SpectraSet& train_set, const SpectraSet& val_set, const TrainConfig& config) {
  config.validate();
  TrainHistory history;
  if (config.epochs == 0) return history;
  const auto len = model.spec().input_len;
  if (train_set.absorbance.cols() != len || val_set.absorbance.cols() != len) {
    throw Error("train: spectrum length does not match the model input length " + std::to_string(len));
  }
  if (train_set.size() == 0 || val_set.size() == 0) throw Error("train: training and validation sets must be non-empty");

  const std::size_t n = train_set.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  AdadeltaState state(model.params().size());
  PlateauScheduler scheduler(config.learning_rate, config.plateau_patience, config.plateau_factor);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix batch;
  std::vector<double> targets;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span(order));
    const double lr = scheduler.learning_rate();
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t rows = std::min(batch_size, n - start);
      batch.resize(static_cast<Eigen::Index>(rows), len);
      targets.resize(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        batch.row(static_cast<Eigen::Index>(r)) = train_set.absorbance.row(static_cast<Eigen::Index>(order[start + r]));
        targets[r] = train_set.reference_mg[order[start + r]];
      }
      const auto fwd = forward(model, batch, Mode::train, &rng);
      const auto grads = backward(model, fwd.cache, targets, config.huber_delta);
      try {
        adadelta_step(model, grads, state, lr, config.rho, config.epsilon);
      } catch (const Error& e) {
        history.aborted = true;
        history.abort_reason = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
        return history;
      }
    }
    const double train_loss = set_loss(model, train_set, config.huber_delta);
    const double val_loss = set_loss(model, val_set, config.huber_delta);
    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val_loss);
    history.learning_rate.push_back(lr);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      history.aborted = true;
      history.abort_reason = "epoch " + std::to_string(epoch + 1) + ": non-finite loss";
      return history;
    }
    scheduler.observe(val_loss);
  }
  return history;
}

double tail_mean_val_loss(const TrainHistory& history, std::size_t window) {
  if (history.val_loss.empty()) throw Error("tail_mean_val_loss: empty history");
  const std::size_t count = std::min(window, history.val_loss.size());
  const double sum = std::accumulate(history.val_loss.end() - static_cast<std::ptrdiff_t>(count), history.val_loss.end(), 0.0);
  return sum / static_cast<double>(count);
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n";
  for (std::size_t e = 0; e < history.epochs(); ++e) {
    out << e + 1 << ',' << detail::format_report(history.train_loss[e]) << ','
        << detail::format_report(history.val_loss[e]) << ',' << detail::format_report(history.learning_rate[e]) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace nirchem
