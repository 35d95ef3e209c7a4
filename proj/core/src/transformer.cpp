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

#include "capvit/transformer.hpp"

#include <cmath>

#include "capvit/error.hpp"

namespace capvit {

std::size_t BlockConfig::hidden() const {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(width) * mlp_ratio));
}

void BlockConfig::validate(const std::string& owner) const {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError(owner + ": width " + std::to_string(width) +
                      " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0) || hidden() == 0) {
    throw ConfigError(owner + ": mlp_ratio must be positive");
  }
}

template <typename T>
BlockWeights<T> BlockWeights<T>::init(const BlockConfig& cfg, SplitMix64& rng) {
  const std::size_t d = cfg.width, h = cfg.hidden();
  BlockWeights w;
  w.ln1_g = param_full<T>({d}, T(1));
  w.ln1_b = param_full<T>({d}, T(0));
  w.wq = trunc_normal<T>({d, d}, rng, kInitStd);
  w.wk = trunc_normal<T>({d, d}, rng, kInitStd);
  w.wv = trunc_normal<T>({d, d}, rng, kInitStd);
  w.wo = trunc_normal<T>({d, d}, rng, kInitStd);
  w.ln2_g = param_full<T>({d}, T(1));
  w.ln2_b = param_full<T>({d}, T(0));
  w.w1 = trunc_normal<T>({d, h}, rng, kInitStd);
  w.b1 = param_full<T>({h}, T(0));
  w.w2 = trunc_normal<T>({h, d}, rng, kInitStd);
  w.b2 = param_full<T>({d}, T(0));
  return w;
}

template <typename T>
void BlockWeights<T>::collect(ParamList<T>& out,
                              const std::string& prefix) const {
  out.push_back({prefix + "ln1.gamma", ln1_g, false});
  out.push_back({prefix + "ln1.beta", ln1_b, false});
  out.push_back({prefix + "attn.wq", wq, true});
  out.push_back({prefix + "attn.wk", wk, true});
  out.push_back({prefix + "attn.wv", wv, true});
  out.push_back({prefix + "attn.wo", wo, true});
  out.push_back({prefix + "ln2.gamma", ln2_g, false});
  out.push_back({prefix + "ln2.beta", ln2_b, false});
  out.push_back({prefix + "mlp.w1", w1, true});
  out.push_back({prefix + "mlp.b1", b1, false});
  out.push_back({prefix + "mlp.w2", w2, true});
  out.push_back({prefix + "mlp.b2", b2, false});
}

template <typename T>
Tensor<T> block_forward(Graph<T>& g, const Tensor<T>& x,
                        const BlockWeights<T>& w, const ops::AttentionShape& shape,
                        const ops::AttentionMask& mask) {
  const Tensor<T> none;
  Tensor<T> h = ops::layernorm(g, x, w.ln1_g, w.ln1_b);
  Tensor<T> q = ops::linear(g, h, w.wq, none);
  Tensor<T> k = ops::linear(g, h, w.wk, none);
  Tensor<T> v = ops::linear(g, h, w.wv, none);
  Tensor<T> a = ops::attention(g, q, k, v, shape, mask);
  Tensor<T> x1 = ops::add(g, x, ops::linear(g, a, w.wo, none));
  Tensor<T> m = ops::layernorm(g, x1, w.ln2_g, w.ln2_b);
  m = ops::gelu(g, ops::linear(g, m, w.w1, w.b1));
  return ops::add(g, x1, ops::linear(g, m, w.w2, w.b2));
}

template struct BlockWeights<float>;
template struct BlockWeights<double>;
template Tensor<float> block_forward(Graph<float>&, const Tensor<float>&,
                                     const BlockWeights<float>&,
                                     const ops::AttentionShape&,
                                     const ops::AttentionMask&);
template Tensor<double> block_forward(Graph<double>&, const Tensor<double>&,
                                      const BlockWeights<double>&,
                                      const ops::AttentionShape&,
                                      const ops::AttentionMask&);

}  // namespace capvit
