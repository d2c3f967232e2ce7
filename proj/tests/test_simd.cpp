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
#include <vector>

#include "doctest.h"
#include "nirchem/error.hpp"
#include "nirchem/rng.hpp"
#include "nirchem/simd.hpp"

using namespace nirchem;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Bound for a sum of `terms` products evaluated in a different order.
double tolerance(double magnitude, std::size_t terms) { return 8.0 * 2.2e-16 * static_cast<double>(terms + 1) * magnitude; }

const std::size_t kLengths[] = {0, 1, 3, 4, 5, 7, 8, 15, 16, 17, 31, 33, 64, 100, 257};

}  // namespace

TEST_CASE("scalar table is always available and listed first") {
  const auto tables = simd::available_tables();
  REQUIRE(!tables.empty());
  CHECK(tables.front()->isa == simd::Isa::scalar);
  CHECK(simd::parse_isa("scalar") == simd::Isa::scalar);
  CHECK(simd::parse_isa("avx2") == simd::Isa::avx2);
  CHECK_THROWS_AS(simd::parse_isa("sse9"), Error);
}

TEST_CASE("every variant matches the scalar reference") {
  const auto& ref = simd::scalar_table();
  Rng rng(1);
  for (const auto* table : simd::available_tables()) {
    INFO("isa " << table->name);
    for (const std::size_t n : kLengths) {
      INFO("n = " << n);
      const auto a = random_vector(n, rng);
      const auto b = random_vector(n, rng);
      double mag = 0.0;
      for (std::size_t i = 0; i < n; ++i) mag += std::abs(a[i] * b[i]);
      CHECK(std::abs(table->dot(a.data(), b.data(), n) - ref.dot(a.data(), b.data(), n)) <= tolerance(mag, n));

      auto y1 = b;
      auto y2 = b;
      table->axpy(0.37, a.data(), y1.data(), n);
      ref.axpy(0.37, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= tolerance(std::abs(y2[i]) + 1.0, 1));

      auto r1 = a;
      auto r2 = a;
      table->relu(r1.data(), n);
      ref.relu(r2.data(), n);
      CHECK(r1 == r2);

      auto g1 = b;
      auto g2 = b;
      table->relu_mask(a.data(), g1.data(), n);
      ref.relu_mask(a.data(), g2.data(), n);
      CHECK(g1 == g2);
    }
  }
}

TEST_CASE("correlate variants agree for many tap and output counts") {
  const auto& ref = simd::scalar_table();
  Rng rng(2);
  for (const auto* table : simd::available_tables()) {
    INFO("isa " << table->name);
    for (const std::size_t taps : {1u, 2u, 3u, 5u, 14u, 29u}) {
      for (const std::size_t out_len : {1u, 3u, 4u, 15u, 16u, 17u, 40u, 123u}) {
        const auto in = random_vector(out_len + taps - 1, rng);
        const auto w = random_vector(taps, rng);
        const auto base = random_vector(out_len, rng);
        auto o1 = base;
        auto o2 = base;
        table->correlate(in.data(), w.data(), taps, o1.data(), out_len);
        ref.correlate(in.data(), w.data(), taps, o2.data(), out_len);
        for (std::size_t j = 0; j < out_len; ++j) {
          double mag = std::abs(base[j]);
          for (std::size_t k = 0; k < taps; ++k) mag += std::abs(w[k] * in[j + k]);
          CHECK(std::abs(o1[j] - o2[j]) <= tolerance(mag, taps));
        }
      }
    }
  }
}

TEST_CASE("scalar correlate matches the definition") {
  const std::vector<double> in{1, 2, 3, 4, 5};
  const std::vector<double> w{1, -1, 2};
  std::vector<double> out{10, 20, 30};
  simd::scalar_table().correlate(in.data(), w.data(), 3, out.data(), 3);
  CHECK(out == std::vector<double>{10 + 1 - 2 + 6, 20 + 2 - 3 + 8, 30 + 3 - 4 + 10});
}

TEST_CASE("adadelta variants agree") {
  const auto& ref = simd::scalar_table();
  Rng rng(3);
  for (const auto* table : simd::available_tables()) {
    INFO("isa " << table->name);
    for (const std::size_t n : kLengths) {
      auto w1 = random_vector(n, rng);
      auto w2 = w1;
      std::vector<double> e1(n, 0.0), e2(n, 0.0), d1(n, 0.0), d2(n, 0.0);
      for (int step = 0; step < 5; ++step) {
        const auto g = random_vector(n, rng);
        table->adadelta(w1.data(), g.data(), e1.data(), d1.data(), n, 0.5, 0.95, 1e-8);
        ref.adadelta(w2.data(), g.data(), e2.data(), d2.data(), n, 0.5, 0.95, 1e-8);
      }
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-12));
        CHECK(d1[i] == doctest::Approx(d2[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("the active table can be switched") {
  const auto original = simd::active().isa;
  simd::set_active(simd::Isa::scalar);
  CHECK(simd::active().isa == simd::Isa::scalar);
  if (simd::avx2_table() == nullptr) CHECK_THROWS_AS(simd::set_active(simd::Isa::avx2), Error);
  if (simd::neon_table() == nullptr) CHECK_THROWS_AS(simd::set_active(simd::Isa::neon), Error);
  simd::set_active(original);
  CHECK(simd::active().isa == original);
}
