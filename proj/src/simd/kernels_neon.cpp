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


#include <arm_neon.h>

#include <cmath>

#include "nirchem/simd.hpp"

// Advanced SIMD is mandatory on AArch64, so no runtime check is needed.

namespace nirchem::simd {

namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void correlate_neon(const double* in, const double* w, std::size_t taps, double* out, std::size_t out_len) {
  std::size_t j = 0;
  for (; j + 8 <= out_len; j += 8) {
    float64x2_t s0 = vdupq_n_f64(0.0);
    float64x2_t s1 = vdupq_n_f64(0.0);
    float64x2_t s2 = vdupq_n_f64(0.0);
    float64x2_t s3 = vdupq_n_f64(0.0);
    const double* base = in + j;
    for (std::size_t k = 0; k < taps; ++k) {
      const float64x2_t wk = vdupq_n_f64(w[k]);
      s0 = vfmaq_f64(s0, wk, vld1q_f64(base + k));
      s1 = vfmaq_f64(s1, wk, vld1q_f64(base + k + 2));
      s2 = vfmaq_f64(s2, wk, vld1q_f64(base + k + 4));
      s3 = vfmaq_f64(s3, wk, vld1q_f64(base + k + 6));
    }
    vst1q_f64(out + j, vaddq_f64(vld1q_f64(out + j), s0));
    vst1q_f64(out + j + 2, vaddq_f64(vld1q_f64(out + j + 2), s1));
    vst1q_f64(out + j + 4, vaddq_f64(vld1q_f64(out + j + 4), s2));
    vst1q_f64(out + j + 6, vaddq_f64(vld1q_f64(out + j + 6), s3));
  }
  for (; j < out_len; ++j) out[j] += dot_neon(w, in + j, taps);
}

void relu_neon(double* x, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t v = vld1q_f64(x + i);
    const uint64x2_t mask = vcgtq_f64(v, zero);
    vst1q_f64(x + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(v), mask)));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask_neon(const double* activation, double* grad, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t mask = vcgtq_f64(vld1q_f64(activation + i), zero);
    vst1q_f64(grad + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(vld1q_f64(grad + i)), mask)));
  }
  for (; i < n; ++i) grad[i] = activation[i] > 0.0 ? grad[i] : 0.0;
}

void adadelta_neon(double* w, const double* g, double* eg2, double* edx2, std::size_t n, double lr, double rho,
                   double eps) {
  const float64x2_t vrho = vdupq_n_f64(rho);
  const float64x2_t vone_minus = vdupq_n_f64(1.0 - rho);
  const float64x2_t veps = vdupq_n_f64(eps);
  const float64x2_t vlr = vdupq_n_f64(lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vg = vld1q_f64(g + i);
    const float64x2_t a = vaddq_f64(vmulq_f64(vrho, vld1q_f64(eg2 + i)), vmulq_f64(vone_minus, vmulq_f64(vg, vg)));
    vst1q_f64(eg2 + i, a);
    const float64x2_t d = vld1q_f64(edx2 + i);
    const float64x2_t update = vdivq_f64(vmulq_f64(vg, vsqrtq_f64(vaddq_f64(d, veps))), vsqrtq_f64(vaddq_f64(a, veps)));
    vst1q_f64(w + i, vsubq_f64(vld1q_f64(w + i), vmulq_f64(vlr, update)));
    vst1q_f64(edx2 + i, vaddq_f64(vmulq_f64(vrho, d), vmulq_f64(vone_minus, vmulq_f64(update, update))));
  }
  for (; i < n; ++i) {
    eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
    const double update = g[i] * std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps);
    w[i] -= lr * update;
    edx2[i] = rho * edx2[i] + (1.0 - rho) * update * update;
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{Isa::neon,     "neon",         dot_neon,       axpy_neon,
                                 correlate_neon, relu_neon, relu_mask_neon, adadelta_neon};
  return &table;
}

}  // namespace nirchem::simd
