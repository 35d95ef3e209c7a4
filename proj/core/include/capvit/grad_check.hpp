// Copyright 2026 The capvit Authors. All Rights Reserved.
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
#include <cstdint>
#include <functional>
#include <string>

#include "capvit/params.hpp"
#include "capvit/tensor.hpp"

namespace capvit {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise at most this many per parameter,
  // chosen by a seeded shuffle.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

using ScalarFn = std::function<Tensor<double>(Graph<double>&)>;

// Compares reverse-mode gradients of `f` against central differences
//   (f(x + h) - f(x - h)) / 2h
// per coordinate, using |a - n| / (|a| + |n| + 1e-12) as the error. Runs at
// 64-bit precision only. Leaves parameter values unchanged and gradients
// holding the analytic result.
GradCheckResult grad_check(const ScalarFn& f, ParamList<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace capvit
