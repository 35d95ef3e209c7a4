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
#include <span>
#include <vector>

#include "capvit/tensor.hpp"

// Differentiable ops. Every op takes the Graph that records its backward
// closure; when no input requires a gradient (or the graph is not
// recording) nothing is recorded and the output is a constant.
//
// Reductions use a fixed ascending summation order so results are
// bit-reproducible run to run.
namespace capvit::ops {

// C[m,n] = A[m,k] B[k,n]. dA = dC Bᵀ, dB = Aᵀ dC.
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// x[..., k] W[k, n] (+ bias[n]); bias may be undefined.
template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias);

template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// Adds v[d] to every row of x[..., d].
template <typename T>
Tensor<T> add_row(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& v);

// Adds table[P, d] to x[R*P, d], row r receiving table[r % P]. Used for
// positional tables shared by every example of a batch.
template <typename T>
Tensor<T> add_tiled(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& table);

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor);

// a * s where s is a one-element tensor.
template <typename T>
Tensor<T> mul_scalar(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& s);

template <typename T>
Tensor<T> exp(Graph<T>& g, const Tensor<T>& a);

// Elementwise clamp; gradient is zero where the clamp is active.
template <typename T>
Tensor<T> clamp(Graph<T>& g, const Tensor<T>& a, T lo, T hi);

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& a);

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& a);

// Softmax along `axis`, with max subtraction. Throws NumericError on NaN
// input.
template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x, std::size_t axis);

// Normalizes each trailing-axis slice to zero mean and unit variance, then
// applies gamma/beta.
template <typename T>
Tensor<T> layernorm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps = T(1e-5));

// GELU, tanh approximation:
//   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x);

// Gathers rows of table[V, d] -> [ids.shape..., d]. Backward scatter-adds.
template <typename T>
Tensor<T> embedding_lookup(Graph<T>& g, const Tensor<T>& table,
                           const IntTensor& ids);

// Mean negative log-likelihood over positions whose target != ignore_id.
// Throws DegenerateBatchError when every target is ignored.
template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits,
                        std::span<const int> targets, int ignore_id);

// Per-example concatenation along the sequence axis:
// a[B*Sa, d], b[B*Sb, d] -> [B*(Sa+Sb), d].
template <typename T>
Tensor<T> concat_sequences(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                           std::size_t batch);

// x[B*S, d] -> x[:, start:start+len, :] as [B*len, d].
template <typename T>
Tensor<T> slice_sequences(Graph<T>& g, const Tensor<T>& x, std::size_t batch,
                          std::size_t start, std::size_t len);

// Gathers rows of x[R, d] -> [rows.size(), d]; backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& x,
                      std::span<const std::size_t> rows);

// x[B*S, d] -> mean over S -> [B, d].
template <typename T>
Tensor<T> mean_pool(Graph<T>& g, const Tensor<T>& x, std::size_t batch);

// Row-wise L2 normalization of x[n, d]: x / max(||x||, eps).
template <typename T>
Tensor<T> l2_normalize(Graph<T>& g, const Tensor<T>& x, T eps = T(1e-12));

// Attention mask: query i may attend key j when (j < prefix || j <= i) and
// key j is valid. prefix = seq gives full bidirectional attention, prefix =
// 0 a causal mask. key_valid, when non-empty, holds one flag per [B*S] row.
// prefix_bias is added to the logits of prefix keys seen from queries past
// the prefix.
struct AttentionMask {
  std::size_t prefix = 0;
  std::vector<unsigned char> key_valid;
  double prefix_bias = 0.0;

  static AttentionMask full(std::size_t seq) { return {seq, {}, 0.0}; }
  static AttentionMask causal() { return {0, {}, 0.0}; }
  static AttentionMask prefix_causal(std::size_t prefix) { return {prefix, {}, 0.0}; }
};

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
};

// Multi-head scaled dot-product attention over q, k, v [B*S, d] (heads laid
// out as contiguous column blocks). Masked keys are skipped, not filled with
// -inf, so outputs never depend on masked values.
template <typename T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v, const AttentionShape& shape,
                    const AttentionMask& mask);

}  // namespace capvit::ops
