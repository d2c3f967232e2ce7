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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

// Inner-loop kernels used by the convolutional network. Every kernel has a
// scalar reference implementation; wider variants are compiled in separate
// translation units and selected once at runtime. All variants of a kernel
// perform the same arithmetic and differ only in rounding (FMA contraction
// and summation order), so results agree to a few ulps per accumulated term.

namespace nirchem::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // out[j] += sum_{k < taps} w[k] * in[j + k] for j < out_len (valid
  // cross-correlation; `in` must hold out_len + taps - 1 values).
  void (*correlate)(const double* in, const double* w, std::size_t taps, double* out, std::size_t out_len);

  // x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);

  // grad[i] = activation[i] > 0 ? grad[i] : 0
  void (*relu_mask)(const double* activation, double* grad, std::size_t n);

  // Adadelta with the update accumulator tracking the step before the
  // learning rate is applied:
  //   Eg2 <- rho Eg2 + (1 - rho) g^2
  //   u    = g sqrt(Edx2 + eps) / sqrt(Eg2 + eps)
  //   w   <- w - lr u
  //   Edx2 <- rho Edx2 + (1 - rho) u^2
  void (*adadelta)(double* w, const double* g, double* eg2, double* edx2, std::size_t n, double lr, double rho,
                   double eps);
};

const KernelTable& scalar_table();

// nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available_tables();

// Table used by the library. Chosen on first use: the widest available
// variant, unless the NIRCHEM_ISA environment variable names another one
// ("scalar", "avx2", "neon").
const KernelTable& active();

// Overrides the active table; throws nirchem::Error if unavailable.
void set_active(Isa isa);

Isa parse_isa(const std::string& name);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace nirchem::simd
