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


#include <immintrin.h>

#include <cmath>

#include "nirchem/simd.hpp"

// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

namespace nirchem::simd {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Sixteen outputs per block stay in registers across all taps.
void correlate_avx2(const double* in, const double* w, std::size_t taps, double* out, std::size_t out_len) {
  std::size_t j = 0;
  for (; j + 16 <= out_len; j += 16) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd();
    __m256d s3 = _mm256_setzero_pd();
    const double* base = in + j;
    for (std::size_t k = 0; k < taps; ++k) {
      const __m256d wk = _mm256_set1_pd(w[k]);
      s0 = _mm256_fmadd_pd(wk, _mm256_loadu_pd(base + k), s0);
      s1 = _mm256_fmadd_pd(wk, _mm256_loadu_pd(base + k + 4), s1);
      s2 = _mm256_fmadd_pd(wk, _mm256_loadu_pd(base + k + 8), s2);
      s3 = _mm256_fmadd_pd(wk, _mm256_loadu_pd(base + k + 12), s3);
    }
    _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j), s0));
    _mm256_storeu_pd(out + j + 4, _mm256_add_pd(_mm256_loadu_pd(out + j + 4), s1));
    _mm256_storeu_pd(out + j + 8, _mm256_add_pd(_mm256_loadu_pd(out + j + 8), s2));
    _mm256_storeu_pd(out + j + 12, _mm256_add_pd(_mm256_loadu_pd(out + j + 12), s3));
  }
  for (; j + 4 <= out_len; j += 4) {
    __m256d s = _mm256_setzero_pd();
    for (std::size_t k = 0; k < taps; ++k) s = _mm256_fmadd_pd(_mm256_set1_pd(w[k]), _mm256_loadu_pd(in + j + k), s);
    _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j), s));
  }
  for (; j < out_len; ++j) {
    // Short tail: vectorize over taps instead.
    out[j] += dot_avx2(w, in + j, taps);
  }
}

void relu_avx2(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(x + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask_avx2(const double* activation, double* grad, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(activation + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_and_pd(_mm256_loadu_pd(grad + i), mask));
  }
  for (; i < n; ++i) grad[i] = activation[i] > 0.0 ? grad[i] : 0.0;
}

void adadelta_avx2(double* w, const double* g, double* eg2, double* edx2, std::size_t n, double lr, double rho,
                   double eps) {
  const __m256d vrho = _mm256_set1_pd(rho);
  const __m256d vone_minus = _mm256_set1_pd(1.0 - rho);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    const __m256d a = _mm256_add_pd(_mm256_mul_pd(vrho, _mm256_loadu_pd(eg2 + i)),
                                    _mm256_mul_pd(vone_minus, _mm256_mul_pd(vg, vg)));
    _mm256_storeu_pd(eg2 + i, a);
    const __m256d d = _mm256_loadu_pd(edx2 + i);
    const __m256d update = _mm256_div_pd(_mm256_mul_pd(vg, _mm256_sqrt_pd(_mm256_add_pd(d, veps))),
                                         _mm256_sqrt_pd(_mm256_add_pd(a, veps)));
    _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), _mm256_mul_pd(vlr, update)));
    _mm256_storeu_pd(edx2 + i, _mm256_add_pd(_mm256_mul_pd(vrho, d),
                                             _mm256_mul_pd(vone_minus, _mm256_mul_pd(update, update))));
  }
  for (; i < n; ++i) {
    eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
    const double update = g[i] * std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps);
    w[i] -= lr * update;
    edx2[i] = rho * edx2[i] + (1.0 - rho) * update * update;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const KernelTable table{Isa::avx2,     "avx2",         dot_avx2,       axpy_avx2,
                                 correlate_avx2, relu_avx2, relu_mask_avx2, adadelta_avx2};
  return supported ? &table : nullptr;
}

}  // namespace nirchem::simd
