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
#include <vector>

#include "capvit/transformer.hpp"

// Caption decoder: kept visual tokens are projected by a connector,
// concatenated in front of the caption, and a prefix-causal transformer
// predicts each next caption token.
namespace capvit {

struct DecoderConfig {
  std::size_t width = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t vocab = 28;  // reserved tokens + grammar words
  std::size_t max_len = 36;  // caption positions, BOS and EOS included
  double keep_ratio = 0.35;
  std::size_t max_seq = 512;  // prefix + caption

  BlockConfig block() const { return {width, heads, mlp_ratio}; }
  void validate() const;
};

// max(1, round_half_up(keep_ratio * n)). Throws ConfigError unless
// 0 < keep_ratio <= 1.
std::size_t keep_count(std::size_t n, double keep_ratio);

// keep_count(n, keep_ratio) indices drawn uniformly without replacement,
// returned in ascending order.
std::vector<std::size_t> sample_mask(std::size_t n, double keep_ratio,
                                     SplitMix64& rng);

template <typename T>
struct DecoderWeights {
  Tensor<T> connector_w;  // [d_enc, d]
  Tensor<T> connector_b;  // [d]
  Tensor<T> visual_seg;   // [d], shared by every visual prefix position
  Tensor<T> tok_emb;      // [V, d]
  Tensor<T> pos;          // [max_len, d]
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> ln_g, ln_b;
  Tensor<T> head_w;  // [d, V]
  Tensor<T> head_b;  // [V]

  static DecoderWeights init(const DecoderConfig& cfg, std::size_t enc_width,
                             SplitMix64& rng);
  void collect(ParamList<T>& out, const std::string& prefix = "decoder.") const;
};

// Teacher-forcing view of a caption batch, trimmed to the longest caption.
// Input position i holds caption token i and is supervised with token i+1;
// targets are PAD (ignored) past each caption's EOS.
struct CaptionBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  IntTensor inputs;          // [B, len]
  std::vector<int> targets;  // [B * len]

  std::vector<unsigned char> loss_mask() const;
};

// captions: BOS .. EOS token ids without padding. Throws ConfigError when a
// caption is longer than max_len or does not start with BOS.
CaptionBatch make_caption_batch(const std::vector<std::vector<int>>& captions,
                                std::size_t max_len);

template <typename T>
struct PrefixBatch {
  std::size_t batch = 0;
  std::size_t kept = 0;  // M
  Tensor<T> tokens;      // [B*M, d_dec]
  std::vector<std::vector<std::size_t>> kept_indices;
};

// Gathers each example's kept visual tokens (rows of visual [B*N, d_enc]),
// applies the connector and adds the visual segment embedding. Every index
// list must have the same length.
template <typename T>
PrefixBatch<T> build_prefix(Graph<T>& g, const DecoderWeights<T>& w,
                            const Tensor<T>& visual, std::size_t batch,
                            std::vector<std::vector<std::size_t>> kept_indices);

// Token embedding plus caption positions 0..len-1 for ids [B, len].
template <typename T>
Tensor<T> embed_caption(Graph<T>& g, const DecoderWeights<T>& w,
                        const IntTensor& ids);

// Runs the decoder over [prefix ; caption] and returns logits [B*len, V] at
// the caption positions. Prefix positions attend to each other freely;
// caption position i sees the whole prefix and caption positions <= i.
// prefix_valid (optional, B*P flags) hides padded prefix positions.
// prefix_bias is added to caption-to-prefix attention logits.
template <typename T>
Tensor<T> decode_forward(Graph<T>& g, const DecoderWeights<T>& w,
                         const DecoderConfig& cfg, const Tensor<T>& prefix,
                         std::size_t prefix_len,
                         const std::vector<unsigned char>& prefix_valid,
                         const IntTensor& captions, double prefix_bias = 0.0);

// Attention offset log(M_train / kept) for a prefix of `kept` of `n` visual
// tokens, where M_train = keep_count(n, cfg.keep_ratio). Keeps the expected
// attention mass on the image at its training value when more tokens are
// kept than in training; 0 at the training keep ratio.
double keep_compensation(const DecoderConfig& cfg, std::size_t n,
                         std::size_t kept);

// Mean next-token cross-entropy over supervised positions.
template <typename T>
Tensor<T> caption_loss(Graph<T>& g, const Tensor<T>& logits,
                       const CaptionBatch& captions);

// Greedy decoding from BOS, per example, until EOS or max_len tokens. Ties go
// to the lowest id. Keeps keep_count(N, keep_ratio) visual tokens, sampled
// with `seed` when keep_ratio < 1. Returned sequences start with BOS.
template <typename T>
std::vector<std::vector<int>> greedy_decode(const DecoderWeights<T>& w,
                                            const DecoderConfig& cfg,
                                            const Tensor<T>& visual,
                                            std::size_t batch,
                                            double keep_ratio = 1.0,
                                            std::uint64_t seed = 0);

}  // namespace capvit
