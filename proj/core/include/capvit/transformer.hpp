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
#include <string>

#include "capvit/ops.hpp"
#include "capvit/params.hpp"
#include "capvit/rng.hpp"

namespace capvit {

// Width, head count and MLP expansion of one pre-norm transformer block.
struct BlockConfig {
  std::size_t width = 64;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;

  std::size_t hidden() const;
  // Throws ConfigError naming `owner` when width is not divisible by heads.
  void validate(const std::string& owner) const;
};

// Attention projections carry no bias; the MLP does.
template <typename T>
struct BlockWeights {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;

  static BlockWeights init(const BlockConfig& cfg, SplitMix64& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

// x + attn(ln1(x)), then + mlp(ln2(x)). x is [B*S, d].
template <typename T>
Tensor<T> block_forward(Graph<T>& g, const Tensor<T>& x,
                        const BlockWeights<T>& w, const ops::AttentionShape& shape,
                        const ops::AttentionMask& mask);

}  // namespace capvit
