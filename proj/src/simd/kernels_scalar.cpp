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


#include <cmath>

#include "nirchem/simd.hpp"

namespace nirchem::simd {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void correlate_scalar(const double* in, const double* w, std::size_t taps, double* out, std::size_t out_len) {
  for (std::size_t j = 0; j < out_len; ++j) {
    double sum = 0.0;
    for (std::size_t k = 0; k < taps; ++k) sum += w[k] * in[j + k];
    out[j] += sum;
  }
}

void relu_scalar(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask_scalar(const double* activation, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] = activation[i] > 0.0 ? grad[i] : 0.0;
}

void adadelta_scalar(double* w, const double* g, double* eg2, double* edx2, std::size_t n, double lr, double rho,
                     double eps) {
  for (std::size_t i = 0; i < n; ++i) {
    eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
    const double update = g[i] * std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps);
    w[i] -= lr * update;
    edx2[i] = rho * edx2[i] + (1.0 - rho) * update * update;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar,    "scalar",         dot_scalar,     axpy_scalar,
                                 correlate_scalar, relu_scalar, relu_mask_scalar, adadelta_scalar};
  return table;
}

}  // namespace nirchem::simd
