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
#include <filesystem>
#include <string>
#include <vector>

#include "capvit/model.hpp"

// Analytic FLOPs and memory estimates for both pipelines. A multiply-add
// counts as 2 FLOPs; layernorm, softmax and bias FLOPs are ignored.
namespace capvit::cost {

struct Tower {
  std::size_t width = 0;
  std::size_t depth = 0;
  std::size_t heads = 1;
  double mlp_ratio = 4.0;
};

struct PipelineSpec {
  std::string name;
  Pipeline pipeline = Pipeline::kV2Generative;
  std::size_t resolution = 224;
  std::size_t patch_size = 14;
  Tower encoder;
  Tower decoder;
  Tower text;               // v1 only
  std::size_t web_len = 80;  // T_w, v1 only
  std::size_t syn_len = 80;  // T_s
  double keep_ratio = 0.35;  // v2 only
  std::size_t vocab = 32000;
  std::size_t embed_dim = 768;
  std::size_t batch = 2048;
  std::size_t devices = 32;

  std::size_t tokens() const;  // N
  void validate() const;
};

struct CostReport {
  std::string name;
  Pipeline pipeline = Pipeline::kV2Generative;
  std::size_t batch = 0;
  // Forward FLOPs per image by component.
  double patch_embed = 0, encoder = 0, connector = 0, text_encoder = 0,
         decoder = 0, lm_head = 0, contrastive_heads = 0;
  double forward = 0;   // sum of the components
  double training = 0;  // 3 x forward
  // Bytes per device.
  double activation_bytes = 0;
  double state_bytes = 0;  // parameters + gradients + AdamW moments
  double memory_bytes = 0;
};

// L (8 n d^2 + 4 n^2 d + 4 mlp_ratio n d^2): q/k/v/o projections,
// attention scores and weighted sum, and the two MLP matmuls.
double transformer_flops(std::size_t n, std::size_t d, std::size_t layers,
                         std::size_t heads = 1, double mlp_ratio = 4.0);

// Stored activation elements of one example through a tower:
// L ((8 + 2 mlp_ratio) n d + heads n^2).
double transformer_activations(std::size_t n, const Tower& t);

double transformer_params(const Tower& t);

// v2: patch embed + encoder(N) + connector(M) + decoder(M + T_s) + LM head.
// v1: patch embed + encoder(N) + connector(N) + text encoder(T_w) +
//     text encoder(T_s) + decoder(N + T_w + T_s) + LM head + contrastive
//     projections.
CostReport pipeline_flops(const PipelineSpec& spec);

// Per-device bytes at `batch` examples split over spec.devices:
// bf16 activations for the local batch plus 16 bytes per parameter of
// fp32 weights, gradients and moments, sharded across devices.
double activation_memory(const PipelineSpec& spec, std::size_t batch);

// Fills pipeline_flops and the memory fields at spec.batch.
CostReport evaluate(const PipelineSpec& spec);

struct Preset {
  std::string name;
  PipelineSpec spec;  // pipeline left at v2
};

std::filesystem::path default_presets_path();
std::vector<Preset> load_presets(const std::filesystem::path& path);
const Preset& find_preset(const std::vector<Preset>& presets,
                          const std::string& name);

// Ratio columns compare each row with the v2 row of the same name (or the
// first row of that name when there is none).
std::string report_csv(const std::vector<CostReport>& reports);
std::string report_text(const std::vector<CostReport>& reports);

}  // namespace capvit::cost
