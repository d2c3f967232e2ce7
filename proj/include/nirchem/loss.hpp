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

#include <span>

namespace nirchem {

// Mean Huber loss: r^2/2 for |r| <= delta, delta * (|r| - delta/2) otherwise.
// Throws on an empty input or non-positive delta.
double huber(std::span<const double> residuals, double delta);

// Derivative of the per-residual Huber term with respect to r.
inline double huber_derivative(double r, double delta) {
  if (r > delta) return delta;
  if (r < -delta) return -delta;
  return r;
}

}  // namespace nirchem
