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


#include <atomic>
#include <cstdlib>

#include "nirchem/error.hpp"
#include "nirchem/simd.hpp"

namespace nirchem::simd {

#if !defined(NIRCHEM_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(NIRCHEM_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar: return &scalar_table();
    case Isa::avx2: return avx2_table();
    case Isa::neon: return neon_table();
  }
  return nullptr;
}

const KernelTable* choose_default() {
  if (const char* env = std::getenv("NIRCHEM_ISA"); env != nullptr && *env != '\0') {
    const KernelTable* table = table_for(parse_isa(env));
    if (table == nullptr) throw Error(std::string("NIRCHEM_ISA=") + env + " is not available on this machine");
    return table;
  }
  if (const auto* t = avx2_table()) return t;
  if (const auto* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{choose_default()};
  return table;
}

}  // namespace

Isa parse_isa(const std::string& name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  throw Error("unknown instruction set '" + name + "' (expected scalar, avx2 or neon)");
}

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> tables{&scalar_table()};
  if (const auto* t = avx2_table()) tables.push_back(t);
  if (const auto* t = neon_table()) tables.push_back(t);
  return tables;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  const KernelTable* table = table_for(isa);
  if (table == nullptr) throw Error("requested instruction set is not available on this machine");
  current().store(table, std::memory_order_release);
}

}  // namespace nirchem::simd
