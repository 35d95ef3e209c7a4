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

#include "capvit/grad_check.hpp"

#include <cmath>
#include <numeric>

#include "capvit/rng.hpp"

namespace capvit {

GradCheckResult grad_check(const ScalarFn& f, ParamList<double>& params,
                           const GradCheckOptions& options) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    Graph<double> g;
    Tensor<double> loss = f(g);
    // A loss that does not depend on any parameter has zero gradients.
    if (loss.requires_grad()) g.backward(loss);
  }

  GradCheckResult result;
  SplitMix64 rng(options.seed);
  const double h = options.h;
  for (auto& p : params) {
    auto data = p.tensor.data();
    auto grad = p.tensor.grad();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 &&
        coords.size() > options.max_coords_per_param) {
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double orig = data[idx];
      Graph<double> g(/*recording=*/false);
      data[idx] = orig + h;
      const double fp = f(g).item();
      data[idx] = orig - h;
      const double fm = f(g).item();
      data[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = grad[idx];
      const double err = std::abs(analytic - numeric) /
                         (std::abs(analytic) + std::abs(numeric) + 1e-12);
      ++result.coordinates;
      if (result.coordinates == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = idx;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace capvit
