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


#include "nirchem/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "nirchem/error.hpp"
#include "nirchem/loss.hpp"
#include "nirchem/simd.hpp"

namespace nirchem {

void CnnSpec::validate() const {
  if (k1 < 1 || k2 < 1 || f1 < 1 || f2 < 1 || dense_units < 1 || input_len < 2) {
    throw Error("cnn spec: kernel counts, filter sizes, dense units and input length must be positive");
  }
  if (f1 + f2 > input_len) {
    throw Error("cnn spec: filter sizes " + std::to_string(f1) + " + " + std::to_string(f2) +
                " exceed input length " + std::to_string(input_len));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("cnn spec: dropout rate must lie in [0, 1)");
  if (!(noise_std >= 0.0)) throw Error("cnn spec: noise std must be non-negative");
}

bool CnnSpec::within_search_space() const {
  const auto in = [](int v, int lo, int hi) { return v >= lo && v <= hi; };
  return in(k1, 2, 40) && in(k2, 2, 40) && in(f1, 5, 150) && in(f2, 5, 150) && in(dense_units, 4, 1000) &&
         dropout_rate >= 0.0 && dropout_rate <= 0.5;
}

std::string spec_to_json(const CnnSpec& spec) {
  nlohmann::json doc{{"k1", spec.k1},
                     {"f1", spec.f1},
                     {"k2", spec.k2},
                     {"f2", spec.f2},
                     {"dropout_rate", spec.dropout_rate},
                     {"dense_units", spec.dense_units},
                     {"noise_std", spec.noise_std},
                     {"input_len", spec.input_len}};
  return doc.dump();
}

CnnSpec spec_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    CnnSpec spec;
    spec.k1 = doc.at("k1").get<int>();
    spec.f1 = doc.at("f1").get<int>();
    spec.k2 = doc.at("k2").get<int>();
    spec.f2 = doc.at("f2").get<int>();
    spec.dropout_rate = doc.at("dropout_rate").get<double>();
    spec.dense_units = doc.at("dense_units").get<int>();
    spec.noise_std = doc.value("noise_std", 0.01);
    spec.input_len = doc.at("input_len").get<int>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("cnn spec JSON: ") + e.what());
  }
}

std::vector<TensorInfo> parameter_layout(const CnnSpec& spec) {
  spec.validate();
  const auto k1 = static_cast<std::size_t>(spec.k1);
  const auto k2 = static_cast<std::size_t>(spec.k2);
  const auto f1 = static_cast<std::size_t>(spec.f1);
  const auto f2 = static_cast<std::size_t>(spec.f2);
  const auto units = static_cast<std::size_t>(spec.dense_units);
  const auto flat = static_cast<std::size_t>(spec.flatten_len());
  std::vector<TensorInfo> layout{
      {"conv1_w", {k1, 1, f1}, 0, 0},   {"conv1_b", {k1}, 0, 0},    {"conv2_w", {k2, k1, f2}, 0, 0},
      {"conv2_b", {k2}, 0, 0},          {"dense_w", {units, flat}, 0, 0}, {"dense_b", {units}, 0, 0},
      {"out_w", {units}, 0, 0},         {"out_b", {1}, 0, 0},
  };
  std::size_t offset = 0;
  for (auto& t : layout) {
    t.size = 1;
    for (const auto d : t.shape) t.size *= d;
    t.offset = offset;
    offset += t.size;
  }
  return layout;
}

CnnModel::CnnModel(const CnnSpec& spec, std::vector<double> params)
    : spec_(spec), layout_(parameter_layout(spec)), params_(std::move(params)) {
  const auto& last = layout_.back();
  if (params_.size() != last.offset + last.size) {
    throw Error("cnn model: expected " + std::to_string(last.offset + last.size) + " parameters, got " +
                std::to_string(params_.size()));
  }
}

CnnModel CnnModel::build(const CnnSpec& spec, std::uint64_t seed) {
  const auto layout = parameter_layout(spec);
  std::vector<double> params(layout.back().offset + layout.back().size, 0.0);
  Rng rng(seed);
  const auto glorot = [&](const TensorInfo& t, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < t.size; ++i) params[t.offset + i] = rng.uniform(-bound, bound);
  };
  const double k1 = spec.k1;
  const double k2 = spec.k2;
  const double f1 = spec.f1;
  const double f2 = spec.f2;
  const double units = spec.dense_units;
  glorot(layout[0], f1, k1 * f1);
  glorot(layout[2], k1 * f2, k2 * f2);
  glorot(layout[4], spec.flatten_len(), units);
  glorot(layout[6], units, 1.0);
  return CnnModel(spec, std::move(params));
}

std::span<const double> CnnModel::tensor(Tensor t) const {
  const auto& info = layout_[static_cast<std::size_t>(t)];
  return std::span<const double>(params_).subspan(info.offset, info.size);
}

std::span<double> CnnModel::mutable_tensor(Tensor t) {
  ++revision_;
  const auto& info = layout_[static_cast<std::size_t>(t)];
  return std::span<double>(params_).subspan(info.offset, info.size);
}

std::vector<double> conv1d_valid(std::span<const double> input, std::size_t in_channels,
                                 std::span<const double> weights, std::span<const double> bias,
                                 std::size_t out_channels, std::size_t taps) {
  if (in_channels == 0 || input.size() % in_channels != 0) throw Error("conv1d: input size is not a multiple of channels");
  const std::size_t in_len = input.size() / in_channels;
  if (taps == 0 || taps > in_len) throw Error("conv1d: filter longer than input");
  if (weights.size() != out_channels * in_channels * taps || bias.size() != out_channels) {
    throw Error("conv1d: weight or bias shape mismatch");
  }
  const std::size_t out_len = in_len - taps + 1;
  const auto& k = simd::active();
  std::vector<double> out(out_channels * out_len);
  for (std::size_t o = 0; o < out_channels; ++o) {
    double* dst = out.data() + o * out_len;
    std::fill(dst, dst + out_len, bias[o]);
    for (std::size_t c = 0; c < in_channels; ++c) {
      k.correlate(input.data() + c * in_len, weights.data() + (o * in_channels + c) * taps, taps, dst, out_len);
    }
  }
  return out;
}

namespace {

struct Dims {
  std::size_t input_len, k1, f1, l1, k2, f2, l2, flat, units;

  explicit Dims(const CnnSpec& s)
      : input_len(static_cast<std::size_t>(s.input_len)),
        k1(static_cast<std::size_t>(s.k1)),
        f1(static_cast<std::size_t>(s.f1)),
        l1(static_cast<std::size_t>(s.conv1_len())),
        k2(static_cast<std::size_t>(s.k2)),
        f2(static_cast<std::size_t>(s.f2)),
        l2(static_cast<std::size_t>(s.conv2_len())),
        flat(static_cast<std::size_t>(s.flatten_len())),
        units(static_cast<std::size_t>(s.dense_units)) {}
};

// Everything after the noise layer, given the (possibly noisy) input and a
// dropout mask (empty mask = no dropout).
void forward_sample(const CnnModel& model, const Dims& d, SampleCache& c) {
  const auto& k = simd::active();
  c.act1 = conv1d_valid(c.input, 1, model.tensor(Tensor::conv1_w), model.tensor(Tensor::conv1_b), d.k1, d.f1);
  k.relu(c.act1.data(), c.act1.size());
  c.act2 = conv1d_valid(c.act1, d.k1, model.tensor(Tensor::conv2_w), model.tensor(Tensor::conv2_b), d.k2, d.f2);
  k.relu(c.act2.data(), c.act2.size());

  if (c.mask.empty()) {
    c.dropped = c.act2;
  } else {
    c.dropped.resize(d.flat);
    for (std::size_t i = 0; i < d.flat; ++i) c.dropped[i] = c.act2[i] * c.mask[i];
  }

  const auto dense_w = model.tensor(Tensor::dense_w);
  const auto dense_b = model.tensor(Tensor::dense_b);
  c.hidden.resize(d.units);
  for (std::size_t u = 0; u < d.units; ++u) {
    c.hidden[u] = dense_b[u] + k.dot(dense_w.data() + u * d.flat, c.dropped.data(), d.flat);
  }
  c.output = model.tensor(Tensor::out_b)[0] + k.dot(model.tensor(Tensor::out_w).data(), c.hidden.data(), d.units);
}

void check_batch(const CnnModel& model, const Matrix& batch) {
  if (batch.cols() != model.spec().input_len) {
    throw Error("cnn forward: expected spectra of length " + std::to_string(model.spec().input_len) + ", got " +
                std::to_string(batch.cols()));
  }
}

}  // namespace

ForwardResult forward(const CnnModel& model, const Matrix& batch, Mode mode, Rng* rng) {
  check_batch(model, batch);
  if (mode == Mode::train && rng == nullptr) throw Error("cnn forward: train mode requires a random source");
  const Dims d(model.spec());
  const double rate = model.spec().dropout_rate;
  const double noise = model.spec().noise_std;

  ForwardResult result;
  result.cache.revision = model.revision();
  result.cache.mode = mode;
  result.cache.samples.resize(static_cast<std::size_t>(batch.rows()));
  result.predictions.resize(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    auto& c = result.cache.samples[static_cast<std::size_t>(r)];
    c.input.assign(batch.row(r).data(), batch.row(r).data() + d.input_len);
    if (mode == Mode::train) {
      if (noise > 0.0) {
        for (auto& v : c.input) v += noise * rng->normal();
      }
      if (rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - rate);
        c.mask.resize(d.flat);
        for (auto& m : c.mask) m = rng->uniform() < rate ? 0.0 : keep_scale;
      }
    }
    forward_sample(model, d, c);
    result.predictions[static_cast<std::size_t>(r)] = c.output;
  }
  return result;
}

std::vector<double> replay_forward(const CnnModel& model, const ForwardCache& cache) {
  const Dims d(model.spec());
  std::vector<double> out;
  out.reserve(cache.samples.size());
  for (const auto& s : cache.samples) {
    SampleCache c;
    c.input = s.input;
    c.mask = s.mask;
    forward_sample(model, d, c);
    out.push_back(c.output);
  }
  return out;
}

Gradients backward(const CnnModel& model, const ForwardCache& cache, std::span<const double> targets,
                   double huber_delta) {
  if (cache.revision != model.revision()) throw Error("cnn backward: stale forward cache (weights changed since forward)");
  if (cache.samples.empty() || targets.size() != cache.samples.size()) {
    throw Error("cnn backward: target count does not match cached batch");
  }
  const Dims d(model.spec());
  const auto& k = simd::active();
  const auto& layout = model.layout();
  Gradients grads;
  grads.values.assign(model.params().size(), 0.0);
  const auto slot = [&](Tensor t) { return grads.values.data() + layout[static_cast<std::size_t>(t)].offset; };
  double* g_conv1_w = slot(Tensor::conv1_w);
  double* g_conv1_b = slot(Tensor::conv1_b);
  double* g_conv2_w = slot(Tensor::conv2_w);
  double* g_conv2_b = slot(Tensor::conv2_b);
  double* g_dense_w = slot(Tensor::dense_w);
  double* g_dense_b = slot(Tensor::dense_b);
  double* g_out_w = slot(Tensor::out_w);
  double* g_out_b = slot(Tensor::out_b);

  const auto conv2_w = model.tensor(Tensor::conv2_w);
  const auto dense_w = model.tensor(Tensor::dense_w);
  const auto out_w = model.tensor(Tensor::out_w);
  const double inv_batch = 1.0 / static_cast<double>(targets.size());

  std::vector<double> d_hidden(d.units);
  std::vector<double> d_flat(d.flat);
  std::vector<double> d_act1(d.k1 * d.l1);

  for (std::size_t s = 0; s < cache.samples.size(); ++s) {
    const auto& c = cache.samples[s];
    const double d_out = huber_derivative(c.output - targets[s], huber_delta) * inv_batch;

    g_out_b[0] += d_out;
    k.axpy(d_out, c.hidden.data(), g_out_w, d.units);
    for (std::size_t u = 0; u < d.units; ++u) d_hidden[u] = d_out * out_w[u];

    std::fill(d_flat.begin(), d_flat.end(), 0.0);
    for (std::size_t u = 0; u < d.units; ++u) {
      g_dense_b[u] += d_hidden[u];
      k.axpy(d_hidden[u], c.dropped.data(), g_dense_w + u * d.flat, d.flat);
      k.axpy(d_hidden[u], dense_w.data() + u * d.flat, d_flat.data(), d.flat);
    }
    if (!c.mask.empty()) {
      for (std::size_t i = 0; i < d.flat; ++i) d_flat[i] *= c.mask[i];
    }
    // d_flat now holds dL/d(act2); gate through ReLU to get dL/d(z2).
    k.relu_mask(c.act2.data(), d_flat.data(), d.flat);

    std::fill(d_act1.begin(), d_act1.end(), 0.0);
    for (std::size_t o = 0; o < d.k2; ++o) {
      const double* dz = d_flat.data() + o * d.l2;
      double bias_grad = 0.0;
      for (std::size_t j = 0; j < d.l2; ++j) bias_grad += dz[j];
      g_conv2_b[o] += bias_grad;
      for (std::size_t ch = 0; ch < d.k1; ++ch) {
        const double* a1 = c.act1.data() + ch * d.l1;
        k.correlate(a1, dz, d.l2, g_conv2_w + (o * d.k1 + ch) * d.f2, d.f2);
        const double* w = conv2_w.data() + (o * d.k1 + ch) * d.f2;
        double* da = d_act1.data() + ch * d.l1;
        for (std::size_t t = 0; t < d.f2; ++t) k.axpy(w[t], dz, da + t, d.l2);
      }
    }
    k.relu_mask(c.act1.data(), d_act1.data(), d_act1.size());

    for (std::size_t o = 0; o < d.k1; ++o) {
      const double* dz = d_act1.data() + o * d.l1;
      double bias_grad = 0.0;
      for (std::size_t j = 0; j < d.l1; ++j) bias_grad += dz[j];
      g_conv1_b[o] += bias_grad;
      k.correlate(c.input.data(), dz, d.l1, g_conv1_w + o * d.f1, d.f1);
    }
  }
  return grads;
}

void adadelta_step(std::span<double> weights, std::span<const double> gradients, AdadeltaState& state, double lr,
                   double rho, double epsilon) {
  if (gradients.size() != weights.size() || state.grad_sq.size() != weights.size() ||
      state.update_sq.size() != weights.size()) {
    throw Error("adadelta: gradient or state shape does not match the weights");
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (!std::isfinite(gradients[i])) {
      throw Error("adadelta: non-finite gradient at parameter " + std::to_string(i) + "; training aborted");
    }
  }
  simd::active().adadelta(weights.data(), gradients.data(), state.grad_sq.data(), state.update_sq.data(),
                          weights.size(), lr, rho, epsilon);
}

void adadelta_step(CnnModel& model, const Gradients& gradients, AdadeltaState& state, double lr, double rho,
                   double epsilon) {
  // Validate before mutable_params() bumps the revision.
  if (gradients.values.size() != model.params().size()) throw Error("adadelta: gradient shape mismatch");
  adadelta_step(model.mutable_params(), gradients.values, state, lr, rho, epsilon);
}

LayerActivations layer_activations(const CnnModel& model, std::span<const double> spectrum) {
  if (spectrum.size() != static_cast<std::size_t>(model.spec().input_len)) {
    throw Error("layer_activations: spectrum length does not match the model input length");
  }
  const Dims d(model.spec());
  SampleCache c;
  c.input.assign(spectrum.begin(), spectrum.end());
  forward_sample(model, d, c);
  return {std::move(c.act1), std::move(c.act2)};
}

// Container layout (all integers little-endian):
//   8 bytes  magic "NIRCNN\0\0"
//   u32      format version (1)
//   u32      reserved (0)
//   u64      header length in bytes
//   header   UTF-8 JSON: {"spec": {...}, "tensors": [{"name", "shape"}, ...]}
//   f64[]    parameters, tensors in declaration order
namespace {

constexpr char kMagic[8] = {'N', 'I', 'R', 'C', 'N', 'N', '\0', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}

std::uint64_t get_uint(std::istream& in, int width) {
  unsigned char bytes[8] = {};
  in.read(reinterpret_cast<char*>(bytes), width);
  if (!in) throw Error("model file: truncated");
  std::uint64_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

}  // namespace

void save_model(const CnnModel& model, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : model.layout()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string header =
      nlohmann::json{{"spec", nlohmann::json::parse(spec_to_json(model.spec()))}, {"tensors", tensors}}.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_model: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, 0);
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const double v : model.params()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw Error("save_model: write failed for " + path.string());
}

CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_model: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error("load_model: " + path.string() + " is not a model file");
  const auto version = get_uint(in, 4);
  if (version != kFormatVersion) throw Error("load_model: unsupported format version " + std::to_string(version));
  get_uint(in, 4);
  const auto header_len = get_uint(in, 8);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error("load_model: truncated header");
  CnnSpec spec;
  try {
    const auto doc = nlohmann::json::parse(header);
    spec = spec_from_json(doc.at("spec").dump());
    const auto layout = parameter_layout(spec);
    const auto& tensors = doc.at("tensors");
    if (tensors.size() != layout.size()) throw Error("load_model: tensor count mismatch");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != layout[i].name ||
          tensors[i].at("shape").get<std::vector<std::size_t>>() != layout[i].shape) {
        throw Error("load_model: tensor '" + layout[i].name + "' does not match the architecture");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("load_model: bad header: ") + e.what());
  }
  const auto layout = parameter_layout(spec);
  std::vector<double> params(layout.back().offset + layout.back().size);
  for (auto& v : params) v = std::bit_cast<double>(get_uint(in, 8));
  return CnnModel(spec, std::move(params));
}

}  // namespace nirchem
