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

#include "capvit/model.hpp"

#include <string>

#include "capvit/error.hpp"

namespace capvit {

Pipeline parse_pipeline(std::string_view name) {
  if (name == "v1" || name == "v1_contrastive") return Pipeline::kV1Contrastive;
  if (name == "v2" || name == "v2_generative") return Pipeline::kV2Generative;
  throw ConfigError("unknown pipeline '" + std::string(name) +
                    "' (valid: v1, v1_contrastive, v2, v2_generative)");
}

std::string_view pipeline_name(Pipeline p) {
  return p == Pipeline::kV1Contrastive ? "v1_contrastive" : "v2_generative";
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (pipeline == Pipeline::kV1Contrastive) {
    text.validate();
    if (text.vocab != decoder.vocab) {
      throw ConfigError("text encoder and decoder must share a vocabulary");
    }
    if (!(lambda_gen >= 0.0)) {
      throw ConfigError("lambda_gen must be non-negative");
    }
  }
}

template <typename T>
Model<T> Model<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(stream_key(seed, {role(RngRole::kInit)}));
  Model m;
  m.cfg = cfg;
  m.encoder = EncoderWeights<T>::init(cfg.encoder, rng);
  m.decoder = DecoderWeights<T>::init(cfg.decoder, cfg.encoder.width, rng);
  if (cfg.pipeline == Pipeline::kV1Contrastive) {
    m.v1 = V1Weights<T>::init(cfg.text, cfg.encoder.width, cfg.decoder.width,
                              rng);
  }
  return m;
}

template <typename T>
ParamList<T> Model<T>::params() const {
  ParamList<T> out;
  encoder.collect(out);
  decoder.collect(out);
  if (v1) v1->collect(out);
  return out;
}

template <typename T>
void Model<T>::set_resolution(std::size_t image_size) {
  EncoderConfig next = cfg.encoder;
  next.image_size = image_size;
  next.validate();
  if (next.grid() != cfg.encoder.grid()) {
    encoder.pos = interpolate_pos(encoder.pos, next.grid());
    encoder.pos.set_requires_grad(true);
  }
  cfg.encoder = next;
}

std::vector<std::vector<std::size_t>> batch_masks(
    std::size_t n, double keep_ratio, const std::vector<std::uint64_t>& indices,
    const MaskKey& key) {
  std::vector<std::vector<std::size_t>> masks;
  masks.reserve(indices.size());
  for (std::uint64_t idx : indices) {
    SplitMix64 rng(stream_key(
        key.seed, {key.stage, key.step, role(RngRole::kMask), idx}));
    masks.push_back(sample_mask(n, keep_ratio, rng));
  }
  return masks;
}

template <typename T>
Tensor<T> caption_only_loss(Graph<T>& g, const Model<T>& model,
                            const Batch<T>& batch, double keep_ratio,
                            const MaskKey& key) {
  const auto& cfg = model.cfg;
  Tensor<T> visual =
      encode(g, batch.patches, batch.size, model.encoder, cfg.encoder);
  PrefixBatch<T> prefix =
      build_prefix(g, model.decoder, visual, batch.size,
                   batch_masks(cfg.encoder.tokens(), keep_ratio, batch.indices,
                               key));
  const CaptionBatch cb = make_caption_batch(batch.target, cfg.decoder.max_len);
  Tensor<T> logits = decode_forward(
      g, model.decoder, cfg.decoder, prefix.tokens, prefix.kept, {}, cb.inputs,
      keep_compensation(cfg.decoder, cfg.encoder.tokens(), prefix.kept));
  return caption_loss(g, logits, cb);
}

template <typename T>
StepLoss<T> training_loss(Graph<T>& g, const Model<T>& model,
                          const Batch<T>& batch, const MaskKey& key) {
  const auto& cfg = model.cfg;
  if (batch.indices.size() != batch.size || batch.target.size() != batch.size) {
    throw DimensionError("training_loss: batch fields disagree on size");
  }
  if (cfg.pipeline == Pipeline::kV2Generative) {
    return {caption_only_loss(g, model, batch, cfg.decoder.keep_ratio, key),
            keep_count(cfg.encoder.tokens(), cfg.decoder.keep_ratio)};
  }
  if (!model.v1) throw ConfigError("v1 pipeline without baseline weights");
  Tensor<T> visual =
      encode(g, batch.patches, batch.size, model.encoder, cfg.encoder);
  V1Loss<T> l = v1_total_loss(g, model.decoder, cfg.decoder, *model.v1,
                              cfg.text, visual, batch.size, batch.web,
                              batch.target, cfg.lambda_gen);
  return {l.total, cfg.encoder.tokens()};
}

#define CAPVIT_INSTANTIATE_MODEL(T)                                            \
  template struct Model<T>;                                                    \
  template StepLoss<T> training_loss(Graph<T>&, const Model<T>&,               \
                                     const Batch<T>&, const MaskKey&);         \
  template Tensor<T> caption_only_loss(Graph<T>&, const Model<T>&,             \
                                       const Batch<T>&, double,                \
                                       const MaskKey&);

CAPVIT_INSTANTIATE_MODEL(float)
CAPVIT_INSTANTIATE_MODEL(double)

}  // namespace capvit
