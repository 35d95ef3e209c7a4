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
#include <optional>
#include <string_view>
#include <vector>

#include "capvit/contrastive.hpp"
#include "capvit/encoder.hpp"
#include "capvit/gen_head.hpp"

namespace capvit {

enum class Pipeline : std::uint8_t { kV1Contrastive, kV2Generative };

// Accepts "v1", "v1_contrastive", "v2", "v2_generative".
Pipeline parse_pipeline(std::string_view name);
std::string_view pipeline_name(Pipeline p);

// One value fully determines a model's architecture.
struct ModelConfig {
  Pipeline pipeline = Pipeline::kV2Generative;
  EncoderConfig encoder;
  DecoderConfig decoder;
  TextEncoderConfig text;  // v1 only
  double lambda_gen = 1.0;  // v1 only

  void validate() const;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  EncoderWeights<T> encoder;
  DecoderWeights<T> decoder;
  std::optional<V1Weights<T>> v1;

  // Draws every weight from the init stream of `seed`.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  // Every trainable tensor, in a fixed order with checkpoint names.
  ParamList<T> params() const;

  // Moves the encoder to a new square resolution, resampling the positional
  // table when the patch grid changes.
  void set_resolution(std::size_t image_size);
};

// A training batch: patches plus unpadded BOS..EOS captions. `target` is
// what the decoder is supervised on; `web` feeds the baseline only.
template <typename T>
struct Batch {
  std::size_t size = 0;
  Tensor<T> patches;  // [B*N, patch_dim]
  std::vector<std::vector<int>> target;
  std::vector<std::vector<int>> web;
  std::vector<std::uint64_t> indices;  // dataset index of each example
};

// Mask streams are keyed by (seed, stage, step, example index), so a batch's
// masks do not depend on how batches were produced.
struct MaskKey {
  std::uint64_t seed = 0;
  std::uint64_t stage = 0;
  std::uint64_t step = 0;
};

template <typename T>
struct StepLoss {
  Tensor<T> loss;
  std::size_t kept_tokens = 0;  // per example; N for the baseline
};

// Caption loss (v2) or contrastive + caption loss (v1) for one batch.
template <typename T>
StepLoss<T> training_loss(Graph<T>& g, const Model<T>& model,
                          const Batch<T>& batch, const MaskKey& key);

// v2 caption loss with an explicit keep ratio (1 disables masking).
template <typename T>
Tensor<T> caption_only_loss(Graph<T>& g, const Model<T>& model,
                            const Batch<T>& batch, double keep_ratio,
                            const MaskKey& key);

// Per-example masks for a batch.
std::vector<std::vector<std::size_t>> batch_masks(
    std::size_t n, double keep_ratio, const std::vector<std::uint64_t>& indices,
    const MaskKey& key);

}  // namespace capvit
