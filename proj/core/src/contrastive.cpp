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

#include "capvit/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capvit/data_synth.hpp"
#include "capvit/error.hpp"

namespace capvit {

using synth::Vocab;

void TextEncoderConfig::validate() const {
  block().validate("text encoder");
  if (vocab < Vocab::kReserved || max_len < 2 || embed_dim == 0) {
    throw ConfigError("text encoder: vocab, max_len and embed_dim must be set");
  }
}

template <typename T>
TextEncoderWeights<T> TextEncoderWeights<T>::init(const TextEncoderConfig& cfg,
                                                  SplitMix64& rng) {
  cfg.validate();
  TextEncoderWeights w;
  w.tok_emb = trunc_normal<T>({cfg.vocab, cfg.width}, rng, kInitStd);
  w.pos = trunc_normal<T>({cfg.max_len, cfg.width}, rng, kInitStd);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    w.blocks.push_back(BlockWeights<T>::init(cfg.block(), rng));
  }
  w.ln_g = param_full<T>({cfg.width}, T(1));
  w.ln_b = param_full<T>({cfg.width}, T(0));
  w.proj = trunc_normal<T>({cfg.width, cfg.embed_dim}, rng, kInitStd);
  return w;
}

template <typename T>
void TextEncoderWeights<T>::collect(ParamList<T>& out,
                                    const std::string& prefix) const {
  out.push_back({prefix + "token_embedding", tok_emb, true});
  out.push_back({prefix + "pos", pos, true});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect(out, prefix + "block" + std::to_string(l) + ".");
  }
  out.push_back({prefix + "ln.gamma", ln_g, false});
  out.push_back({prefix + "ln.beta", ln_b, false});
  out.push_back({prefix + "proj", proj, true});
}

IntTensor pad_batch(const std::vector<std::vector<int>>& captions) {
  std::size_t len = 1;
  for (const auto& c : captions) len = std::max(len, c.size());
  std::vector<int> ids(captions.size() * len, Vocab::kPad);
  for (std::size_t b = 0; b < captions.size(); ++b) {
    std::copy(captions[b].begin(), captions[b].end(), ids.begin() + b * len);
  }
  return IntTensor({captions.size(), len}, std::move(ids));
}

template <typename T>
Tensor<T> text_encode(Graph<T>& g, const TextEncoderWeights<T>& w,
                      const TextEncoderConfig& cfg, const IntTensor& ids) {
  if (ids.shape.size() != 2 || ids.shape[1] > cfg.max_len) {
    throw ConfigError("text_encode: ids " + shape_str(ids.shape) +
                      " exceed max_len " + std::to_string(cfg.max_len));
  }
  const std::size_t batch = ids.shape[0], len = ids.shape[1];
  Tensor<T> x = ops::embedding_lookup(g, w.tok_emb, ids);
  x = ops::reshape(g, x, {batch * len, cfg.width});
  std::vector<std::size_t> rows(len);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  x = ops::add_tiled(g, x, ops::gather_rows(g, w.pos, rows));
  const ops::AttentionShape shape{batch, len, cfg.heads};
  for (const auto& block : w.blocks) {
    x = block_forward(g, x, block, shape, ops::AttentionMask::causal());
  }
  x = ops::layernorm(g, x, w.ln_g, w.ln_b);
  std::vector<std::size_t> pooled(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t last = 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (ids.data[b * len + i] != Vocab::kPad) last = i;
    }
    pooled[b] = b * len + last;
  }
  return ops::linear(g, ops::gather_rows(g, x, pooled), w.proj, Tensor<T>());
}

template <typename T>
ContrastiveHead<T> ContrastiveHead<T>::init(std::size_t enc_width,
                                            std::size_t embed_dim,
                                            SplitMix64& rng) {
  ContrastiveHead h;
  h.img_proj = trunc_normal<T>({enc_width, embed_dim}, rng, kInitStd);
  h.log_scale = param_full<T>({1}, static_cast<T>(kInitLogitScale));
  return h;
}

template <typename T>
void ContrastiveHead<T>::collect(ParamList<T>& out,
                                 const std::string& prefix) const {
  out.push_back({prefix + "img_proj", img_proj, true});
  out.push_back({prefix + "log_scale", log_scale, false});
}

template <typename T>
Tensor<T> ContrastiveHead<T>::logit_scale(Graph<T>& g) const {
  return ops::clamp(g, ops::exp(g, log_scale), static_cast<T>(kMinLogitScale),
                    static_cast<T>(kMaxLogitScale));
}

template <typename T>
Tensor<T> ContrastiveHead<T>::image_embedding(Graph<T>& g,
                                              const Tensor<T>& visual,
                                              std::size_t batch) const {
  return ops::linear(g, ops::mean_pool(g, visual, batch), img_proj,
                     Tensor<T>());
}

template <typename T>
Tensor<T> info_nce(Graph<T>& g, const Tensor<T>& img, const Tensor<T>& txt,
                   const Tensor<T>& logit_scale) {
  if (img.rank() != 2 || img.shape() != txt.shape()) {
    throw DimensionError("info_nce: embeddings " + shape_str(img.shape()) +
                         " and " + shape_str(txt.shape()) + " differ");
  }
  const std::size_t batch = img.dim(0);
  if (batch == 0) throw DegenerateBatchError("info_nce: empty batch");
  Tensor<T> a = ops::l2_normalize(g, img);
  Tensor<T> b = ops::l2_normalize(g, txt);
  Tensor<T> sim = ops::mul_scalar(
      g, ops::matmul(g, a, ops::transpose(g, b)), logit_scale);
  std::vector<int> diag(batch);
  std::iota(diag.begin(), diag.end(), 0);
  Tensor<T> i2t = ops::cross_entropy(g, sim, diag, -1);
  Tensor<T> t2i = ops::cross_entropy(g, ops::transpose(g, sim), diag, -1);
  return ops::scale(g, ops::add(g, i2t, t2i), T(0.5));
}

template <typename T>
Tensor<T> dual_contrastive(Graph<T>& g, const Tensor<T>& img,
                           const Tensor<T>& web, const Tensor<T>& syn,
                           const Tensor<T>& logit_scale) {
  return ops::scale(g,
                    ops::add(g, info_nce(g, img, web, logit_scale),
                             info_nce(g, img, syn, logit_scale)),
                    T(0.5));
}

template <typename T>
V1Weights<T> V1Weights<T>::init(const TextEncoderConfig& text_cfg,
                                std::size_t enc_width, std::size_t dec_width,
                                SplitMix64& rng) {
  V1Weights w;
  w.text = TextEncoderWeights<T>::init(text_cfg, rng);
  w.head = ContrastiveHead<T>::init(enc_width, text_cfg.embed_dim, rng);
  w.web_seg = trunc_normal<T>({dec_width}, rng, kInitStd);
  return w;
}

template <typename T>
void V1Weights<T>::collect(ParamList<T>& out) const {
  text.collect(out);
  head.collect(out);
  out.push_back({"decoder.web_segment", web_seg, true});
}

template <typename T>
Tensor<T> v1_caption_loss(Graph<T>& g, const DecoderWeights<T>& dec,
                          const DecoderConfig& dec_cfg, const Tensor<T>& web_seg,
                          const Tensor<T>& visual, std::size_t batch,
                          const std::vector<std::vector<int>>& web_ids,
                          const std::vector<std::vector<int>>& syn_ids) {
  if (web_ids.size() != batch || syn_ids.size() != batch) {
    throw DimensionError("v1_caption_loss: caption counts do not match batch " +
                         std::to_string(batch));
  }
  const std::size_t n = visual.rows() / batch;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  PrefixBatch<T> vis = build_prefix(
      g, dec, visual, batch, std::vector<std::vector<std::size_t>>(batch, all));

  std::vector<std::vector<int>> words(batch);
  std::size_t web_len = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (int id : web_ids[b]) {
      if (id != Vocab::kBos && id != Vocab::kEos && id != Vocab::kPad) {
        words[b].push_back(id);
      }
    }
    web_len = std::max(web_len, words[b].size());
  }

  Tensor<T> prefix = vis.tokens;
  std::vector<unsigned char> valid;
  if (web_len > 0) {
    std::vector<int> ids(batch * web_len, Vocab::kPad);
    valid.assign(batch * (n + web_len), 1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(words[b].begin(), words[b].end(), ids.begin() + b * web_len);
      for (std::size_t i = words[b].size(); i < web_len; ++i) {
        valid[b * (n + web_len) + n + i] = 0;
      }
    }
    Tensor<T> web = embed_caption(g, dec, IntTensor({batch, web_len}, ids));
    web = ops::add_row(g, web, web_seg);
    prefix = ops::concat_sequences(g, prefix, web, batch);
  }
  const CaptionBatch cb = make_caption_batch(syn_ids, dec_cfg.max_len);
  Tensor<T> logits =
      decode_forward(g, dec, dec_cfg, prefix, n + web_len, valid, cb.inputs);
  return caption_loss(g, logits, cb);
}

template <typename T>
V1Loss<T> v1_total_loss(Graph<T>& g, const DecoderWeights<T>& dec,
                        const DecoderConfig& dec_cfg, const V1Weights<T>& v1,
                        const TextEncoderConfig& text_cfg,
                        const Tensor<T>& visual, std::size_t batch,
                        const std::vector<std::vector<int>>& web_ids,
                        const std::vector<std::vector<int>>& syn_ids,
                        double lambda_gen) {
  if (!(lambda_gen >= 0.0)) {
    throw ConfigError("lambda_gen must be non-negative");
  }
  if (batch == 0 || web_ids.size() != batch || syn_ids.size() != batch) {
    throw DegenerateBatchError("v1 loss: batch of " + std::to_string(batch) +
                               " with " + std::to_string(web_ids.size()) + "/" +
                               std::to_string(syn_ids.size()) + " captions");
  }
  V1Loss<T> out;
  Tensor<T> img = v1.head.image_embedding(g, visual, batch);
  Tensor<T> web = text_encode(g, v1.text, text_cfg, pad_batch(web_ids));
  Tensor<T> syn = text_encode(g, v1.text, text_cfg, pad_batch(syn_ids));
  out.contrastive = dual_contrastive(g, img, web, syn, v1.head.logit_scale(g));
  out.caption = v1_caption_loss(g, dec, dec_cfg, v1.web_seg, visual, batch,
                                web_ids, syn_ids);
  out.total = ops::add(g, out.contrastive,
                       ops::scale(g, out.caption, static_cast<T>(lambda_gen)));
  return out;
}

#define CAPVIT_INSTANTIATE_CONTRASTIVE(T)                                      \
  template struct TextEncoderWeights<T>;                                       \
  template struct ContrastiveHead<T>;                                          \
  template struct V1Weights<T>;                                                \
  template Tensor<T> text_encode(Graph<T>&, const TextEncoderWeights<T>&,      \
                                 const TextEncoderConfig&, const IntTensor&);  \
  template Tensor<T> info_nce(Graph<T>&, const Tensor<T>&, const Tensor<T>&,   \
                              const Tensor<T>&);                               \
  template Tensor<T> dual_contrastive(Graph<T>&, const Tensor<T>&,             \
                                      const Tensor<T>&, const Tensor<T>&,      \
                                      const Tensor<T>&);                       \
  template Tensor<T> v1_caption_loss(                                          \
      Graph<T>&, const DecoderWeights<T>&, const DecoderConfig&,               \
      const Tensor<T>&, const Tensor<T>&, std::size_t,                         \
      const std::vector<std::vector<int>>&,                                    \
      const std::vector<std::vector<int>>&);                                   \
  template V1Loss<T> v1_total_loss(                                            \
      Graph<T>&, const DecoderWeights<T>&, const DecoderConfig&,               \
      const V1Weights<T>&, const TextEncoderConfig&, const Tensor<T>&,         \
      std::size_t, const std::vector<std::vector<int>>&,                       \
      const std::vector<std::vector<int>>&, double);

CAPVIT_INSTANTIATE_CONTRASTIVE(float)
CAPVIT_INSTANTIATE_CONTRASTIVE(double)

}  // namespace capvit
