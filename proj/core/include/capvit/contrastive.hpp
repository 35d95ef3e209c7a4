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
#include <vector>

#include "capvit/encoder.hpp"
#include "capvit/gen_head.hpp"

// The contrastive + caption baseline: a causal text encoder, a symmetric
// InfoNCE loss against both captions of each image, and a caption loss
// conditioned on the image and its web caption.
namespace capvit {

struct TextEncoderConfig {
  std::size_t width = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t vocab = 28;  // reserved tokens + grammar words
  std::size_t max_len = 36;
  std::size_t embed_dim = 64;

  BlockConfig block() const { return {width, heads, mlp_ratio}; }
  void validate() const;
};

template <typename T>
struct TextEncoderWeights {
  Tensor<T> tok_emb;  // [V, d]
  Tensor<T> pos;      // [max_len, d]
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> ln_g, ln_b;
  Tensor<T> proj;  // [d, embed_dim]

  static TextEncoderWeights init(const TextEncoderConfig& cfg, SplitMix64& rng);
  void collect(ParamList<T>& out, const std::string& prefix = "text.") const;
};

// ids [B, L] (BOS .. EOS, PAD right) -> [B, embed_dim], taken at each
// row's last non-PAD position after causal self-attention.
template <typename T>
Tensor<T> text_encode(Graph<T>& g, const TextEncoderWeights<T>& w,
                      const TextEncoderConfig& cfg, const IntTensor& ids);

inline constexpr double kInitLogitScale = 2.6592600369327779;  // ln(1/0.07)
inline constexpr double kMinLogitScale = 0.01;
inline constexpr double kMaxLogitScale = 100.0;

template <typename T>
struct ContrastiveHead {
  Tensor<T> img_proj;   // [d_enc, embed_dim]
  Tensor<T> log_scale;  // [1], ln(1/tau)

  static ContrastiveHead init(std::size_t enc_width, std::size_t embed_dim,
                              SplitMix64& rng);
  void collect(ParamList<T>& out, const std::string& prefix = "head.") const;

  // exp(log_scale) clamped to [0.01, 100].
  Tensor<T> logit_scale(Graph<T>& g) const;
  // Mean-pooled visual tokens [B*N, d_enc] projected to [B, embed_dim].
  Tensor<T> image_embedding(Graph<T>& g, const Tensor<T>& visual,
                            std::size_t batch) const;
};

// Symmetric cross-entropy over the B x B cosine-similarity matrix scaled by
// logit_scale (= 1/tau), averaged over both directions. Throws
// DegenerateBatchError for B = 0.
template <typename T>
Tensor<T> info_nce(Graph<T>& g, const Tensor<T>& img, const Tensor<T>& txt,
                   const Tensor<T>& logit_scale);

// Mean of info_nce(img, web) and info_nce(img, syn).
template <typename T>
Tensor<T> dual_contrastive(Graph<T>& g, const Tensor<T>& img,
                           const Tensor<T>& web, const Tensor<T>& syn,
                           const Tensor<T>& logit_scale);

// Weights the baseline adds on top of an encoder and caption decoder.
template <typename T>
struct V1Weights {
  TextEncoderWeights<T> text;
  ContrastiveHead<T> head;
  Tensor<T> web_seg;  // [d_dec], added to web-caption context positions

  static V1Weights init(const TextEncoderConfig& text_cfg, std::size_t enc_width,
                        std::size_t dec_width, SplitMix64& rng);
  void collect(ParamList<T>& out) const;
};

// Caption loss with decoder prefix [all N visual tokens ; web caption words].
// The web context drops BOS/EOS and is padded per batch (padding is hidden
// from attention); only synthetic-caption positions are supervised, so an
// empty web caption reduces to the caption-only loss at keep ratio 1.
template <typename T>
Tensor<T> v1_caption_loss(Graph<T>& g, const DecoderWeights<T>& dec,
                          const DecoderConfig& dec_cfg, const Tensor<T>& web_seg,
                          const Tensor<T>& visual, std::size_t batch,
                          const std::vector<std::vector<int>>& web_ids,
                          const std::vector<std::vector<int>>& syn_ids);

template <typename T>
struct V1Loss {
  Tensor<T> contrastive;
  Tensor<T> caption;
  Tensor<T> total;
};

// dual_contrastive + lambda_gen * v1_caption_loss, from visual tokens
// [B*N, d_enc] and unpadded BOS..EOS captions.
template <typename T>
V1Loss<T> v1_total_loss(Graph<T>& g, const DecoderWeights<T>& dec,
                        const DecoderConfig& dec_cfg, const V1Weights<T>& v1,
                        const TextEncoderConfig& text_cfg,
                        const Tensor<T>& visual, std::size_t batch,
                        const std::vector<std::vector<int>>& web_ids,
                        const std::vector<std::vector<int>>& syn_ids,
                        double lambda_gen);

// Pads BOS..EOS captions to the longest one: [B, L].
IntTensor pad_batch(const std::vector<std::vector<int>>& captions);

}  // namespace capvit
