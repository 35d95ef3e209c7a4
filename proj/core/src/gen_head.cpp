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

#include "capvit/gen_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capvit/data_synth.hpp"
#include "capvit/error.hpp"

namespace capvit {

using synth::Vocab;

void DecoderConfig::validate() const {
  block().validate("decoder");
  if (vocab < Vocab::kReserved) {
    throw ConfigError("decoder: vocab of " + std::to_string(vocab) +
                      " cannot hold the reserved tokens");
  }
  if (max_len < 2) throw ConfigError("decoder: max_len must be at least 2");
  keep_count(1, keep_ratio);
}

std::size_t keep_count(std::size_t n, double keep_ratio) {
  if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
    throw ConfigError("keep_ratio must be in (0, 1], got " +
                      std::to_string(keep_ratio));
  }
  if (n == 0) throw ConfigError("keep_count: no visual tokens");
  const auto m = static_cast<std::size_t>(
      std::floor(keep_ratio * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(m, 1, n);
}

std::vector<std::size_t> sample_mask(std::size_t n, double keep_ratio,
                                     SplitMix64& rng) {
  const std::size_t m = keep_count(n, keep_ratio);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m == n) return idx;
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
DecoderWeights<T> DecoderWeights<T>::init(const DecoderConfig& cfg,
                                          std::size_t enc_width,
                                          SplitMix64& rng) {
  cfg.validate();
  const std::size_t d = cfg.width;
  DecoderWeights w;
  w.connector_w = trunc_normal<T>({enc_width, d}, rng, kInitStd);
  w.connector_b = param_full<T>({d}, T(0));
  w.visual_seg = trunc_normal<T>({d}, rng, kInitStd);
  w.tok_emb = trunc_normal<T>({cfg.vocab, d}, rng, kInitStd);
  w.pos = trunc_normal<T>({cfg.max_len, d}, rng, kInitStd);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    w.blocks.push_back(BlockWeights<T>::init(cfg.block(), rng));
  }
  w.ln_g = param_full<T>({d}, T(1));
  w.ln_b = param_full<T>({d}, T(0));
  w.head_w = trunc_normal<T>({d, cfg.vocab}, rng, kInitStd);
  w.head_b = param_full<T>({cfg.vocab}, T(0));
  return w;
}

template <typename T>
void DecoderWeights<T>::collect(ParamList<T>& out,
                                const std::string& prefix) const {
  out.push_back({prefix + "connector.w", connector_w, true});
  out.push_back({prefix + "connector.b", connector_b, false});
  out.push_back({prefix + "visual_segment", visual_seg, true});
  out.push_back({prefix + "token_embedding", tok_emb, true});
  out.push_back({prefix + "pos", pos, true});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect(out, prefix + "block" + std::to_string(l) + ".");
  }
  out.push_back({prefix + "ln.gamma", ln_g, false});
  out.push_back({prefix + "ln.beta", ln_b, false});
  out.push_back({prefix + "head.w", head_w, true});
  out.push_back({prefix + "head.b", head_b, false});
}

std::vector<unsigned char> CaptionBatch::loss_mask() const {
  std::vector<unsigned char> m(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    m[i] = targets[i] != Vocab::kPad;
  }
  return m;
}

CaptionBatch make_caption_batch(const std::vector<std::vector<int>>& captions,
                                std::size_t max_len) {
  CaptionBatch cb;
  cb.batch = captions.size();
  std::size_t longest = 0;
  for (const auto& c : captions) {
    if (c.empty() || c.front() != Vocab::kBos) {
      throw ConfigError("caption batch: every caption must start with BOS");
    }
    if (c.size() > max_len) {
      throw ConfigError("caption batch: caption of " + std::to_string(c.size()) +
                        " tokens exceeds max_len " + std::to_string(max_len));
    }
    longest = std::max(longest, c.size());
  }
  // The last token of the longest caption is only ever a target.
  cb.len = std::max<std::size_t>(longest, 2) - 1;
  std::vector<int> in(cb.batch * cb.len, Vocab::kPad);
  cb.targets.assign(cb.batch * cb.len, Vocab::kPad);
  for (std::size_t b = 0; b < cb.batch; ++b) {
    const auto& c = captions[b];
    for (std::size_t i = 0; i < cb.len && i < c.size(); ++i) {
      in[b * cb.len + i] = c[i];
      if (i + 1 < c.size()) cb.targets[b * cb.len + i] = c[i + 1];
    }
  }
  cb.inputs = IntTensor({cb.batch, cb.len}, std::move(in));
  return cb;
}

template <typename T>
PrefixBatch<T> build_prefix(Graph<T>& g, const DecoderWeights<T>& w,
                            const Tensor<T>& visual, std::size_t batch,
                            std::vector<std::vector<std::size_t>> kept_indices) {
  if (batch == 0 || kept_indices.size() != batch ||
      visual.rows() % batch != 0) {
    throw DimensionError("build_prefix: " +
                         std::to_string(kept_indices.size()) +
                         " index lists for visual tokens " +
                         shape_str(visual.shape()) + " and batch " +
                         std::to_string(batch));
  }
  const std::size_t n = visual.rows() / batch;
  const std::size_t m = kept_indices.front().size();
  std::vector<std::size_t> rows;
  rows.reserve(batch * m);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& kept = kept_indices[b];
    if (kept.size() != m) {
      throw DimensionError("build_prefix: examples keep different token counts");
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (kept[i] >= n || (i > 0 && kept[i] <= kept[i - 1])) {
        throw IndexError("build_prefix: kept indices must be strictly "
                         "increasing and below " + std::to_string(n));
      }
      rows.push_back(b * n + kept[i]);
    }
  }
  PrefixBatch<T> p;
  p.batch = batch;
  p.kept = m;
  Tensor<T> kept_tokens = ops::gather_rows(g, visual, rows);
  p.tokens = ops::add_row(
      g, ops::linear(g, kept_tokens, w.connector_w, w.connector_b),
      w.visual_seg);
  p.kept_indices = std::move(kept_indices);
  return p;
}

template <typename T>
Tensor<T> embed_caption(Graph<T>& g, const DecoderWeights<T>& w,
                        const IntTensor& ids) {
  if (ids.shape.size() != 2 || ids.shape[1] > w.pos.dim(0)) {
    throw ConfigError("embed_caption: caption ids " + shape_str(ids.shape) +
                      " exceed the " + std::to_string(w.pos.dim(0)) +
                      " caption positions");
  }
  const std::size_t len = ids.shape[1];
  Tensor<T> e = ops::embedding_lookup(g, w.tok_emb, ids);
  e = ops::reshape(g, e, {ids.numel(), w.tok_emb.dim(1)});
  std::vector<std::size_t> pos_rows(len);
  std::iota(pos_rows.begin(), pos_rows.end(), std::size_t{0});
  return ops::add_tiled(g, e, ops::gather_rows(g, w.pos, pos_rows));
}

template <typename T>
Tensor<T> decode_forward(Graph<T>& g, const DecoderWeights<T>& w,
                         const DecoderConfig& cfg, const Tensor<T>& prefix,
                         std::size_t prefix_len,
                         const std::vector<unsigned char>& prefix_valid,
                         const IntTensor& captions, double prefix_bias) {
  if (captions.shape.size() != 2) {
    throw DimensionError("decode_forward: captions must be [B, len], got " +
                         shape_str(captions.shape));
  }
  const std::size_t batch = captions.shape[0], len = captions.shape[1];
  const std::size_t seq = prefix_len + len;
  if (seq > cfg.max_seq) {
    throw ConfigError("decode_forward: sequence of " + std::to_string(seq) +
                      " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  if (len > cfg.max_len) {
    throw ConfigError("decode_forward: caption length " + std::to_string(len) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  }
  if (prefix_len > 0 && prefix.rows() != batch * prefix_len) {
    throw DimensionError("decode_forward: prefix " + shape_str(prefix.shape()) +
                         " does not match batch " + std::to_string(batch) +
                         " x " + std::to_string(prefix_len));
  }
  Tensor<T> x = embed_caption(g, w, captions);
  if (prefix_len > 0) x = ops::concat_sequences(g, prefix, x, batch);

  ops::AttentionMask mask = ops::AttentionMask::prefix_causal(prefix_len);
  mask.prefix_bias = prefix_bias;
  if (!prefix_valid.empty()) {
    if (prefix_valid.size() != batch * prefix_len) {
      throw DimensionError("decode_forward: prefix_valid has " +
                           std::to_string(prefix_valid.size()) + " flags");
    }
    mask.key_valid.assign(batch * seq, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(prefix_valid.begin() + b * prefix_len, prefix_len,
                  mask.key_valid.begin() + b * seq);
    }
  }
  const ops::AttentionShape shape{batch, seq, cfg.heads};
  for (const auto& block : w.blocks) {
    x = block_forward(g, x, block, shape, mask);
  }
  if (prefix_len > 0) x = ops::slice_sequences(g, x, batch, prefix_len, len);
  x = ops::layernorm(g, x, w.ln_g, w.ln_b);
  Tensor<T> logits = ops::linear(g, x, w.head_w, w.head_b);
  if (!logits.all_finite()) {
    throw NumericError("decode_forward: non-finite logits");
  }
  return logits;
}

double keep_compensation(const DecoderConfig& cfg, std::size_t n,
                         std::size_t kept) {
  const std::size_t trained = keep_count(n, cfg.keep_ratio);
  if (kept == trained) return 0.0;
  return std::log(static_cast<double>(trained) / static_cast<double>(kept));
}

template <typename T>
Tensor<T> caption_loss(Graph<T>& g, const Tensor<T>& logits,
                       const CaptionBatch& captions) {
  return ops::cross_entropy(g, logits, captions.targets, Vocab::kPad);
}

template <typename T>
std::vector<std::vector<int>> greedy_decode(const DecoderWeights<T>& w,
                                            const DecoderConfig& cfg,
                                            const Tensor<T>& visual,
                                            std::size_t batch,
                                            double keep_ratio,
                                            std::uint64_t seed) {
  Graph<T> g(/*recording=*/false);
  const std::size_t n = visual.rows() / batch;
  std::vector<std::vector<std::size_t>> kept(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    SplitMix64 rng(stream_key(seed, {role(RngRole::kMask), b}));
    kept[b] = sample_mask(n, keep_ratio, rng);
  }
  const PrefixBatch<T> prefix = build_prefix(g, w, visual, batch, kept);
  const double bias = keep_compensation(cfg, n, prefix.kept);
  const std::size_t vocab = w.head_b.numel();

  std::vector<std::vector<int>> seqs(batch, std::vector<int>{Vocab::kBos});
  std::vector<bool> done(batch, false);
  for (std::size_t t = 1; t < cfg.max_len; ++t) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    std::vector<int> ids(batch * t, Vocab::kPad);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(seqs[b].begin(), seqs[b].end(), ids.begin() + b * t);
    }
    const Tensor<T> logits =
        decode_forward(g, w, cfg, prefix.tokens, prefix.kept, {},
                       IntTensor({batch, t}, std::move(ids)), bias);
    for (std::size_t b = 0; b < batch; ++b) {
      if (done[b]) continue;
      const T* row = logits.data().data() + (b * t + t - 1) * vocab;
      // max_element returns the first maximum, i.e. the lowest id on ties.
      const int next =
          static_cast<int>(std::max_element(row, row + vocab) - row);
      seqs[b].push_back(next);
      if (next == Vocab::kEos) done[b] = true;
    }
  }
  return seqs;
}

#define CAPVIT_INSTANTIATE_GEN_HEAD(T)                                         \
  template struct DecoderWeights<T>;                                           \
  template PrefixBatch<T> build_prefix(Graph<T>&, const DecoderWeights<T>&,    \
                                       const Tensor<T>&, std::size_t,          \
                                       std::vector<std::vector<std::size_t>>); \
  template Tensor<T> embed_caption(Graph<T>&, const DecoderWeights<T>&,        \
                                   const IntTensor&);                          \
  template Tensor<T> decode_forward(Graph<T>&, const DecoderWeights<T>&,       \
                                    const DecoderConfig&, const Tensor<T>&,    \
                                    std::size_t,                               \
                                    const std::vector<unsigned char>&,         \
                                    const IntTensor&, double);                 \
  template Tensor<T> caption_loss(Graph<T>&, const Tensor<T>&,                 \
                                  const CaptionBatch&);                        \
  template std::vector<std::vector<int>> greedy_decode(                        \
      const DecoderWeights<T>&, const DecoderConfig&, const Tensor<T>&,        \
      std::size_t, double, std::uint64_t);

CAPVIT_INSTANTIATE_GEN_HEAD(float)
CAPVIT_INSTANTIATE_GEN_HEAD(double)

}  // namespace capvit
