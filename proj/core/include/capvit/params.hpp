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

#include <string>
#include <vector>

#include "capvit/rng.hpp"
#include "capvit/tensor.hpp"

namespace capvit {

// A trainable tensor with the name used in checkpoints and the optimizer.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // false for layernorm affines, biases, temperature
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Truncated-normal (+-2 std) trainable tensor.
template <typename T>
Tensor<T> trunc_normal(Shape shape, SplitMix64& rng, double stddev) {
  Tensor<T> t(std::move(shape), /*requires_grad=*/true);
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

template <typename T>
Tensor<T> param_full(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, /*requires_grad=*/true);
}

inline constexpr double kInitStd = 0.02;

}  // namespace capvit
