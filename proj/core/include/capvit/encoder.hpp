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

#include "capvit/data_synth.hpp"
#include "capvit/transformer.hpp"

namespace capvit {

// Vanilla ViT: patch projection + learned positions, pre-norm blocks with
// full bidirectional attention, final layernorm. No CLS token.
struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t width = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  BlockConfig block() const { return {width, heads, mlp_ratio}; }
  void validate() const;
};

template <typename T>
struct EncoderWeights {
  Tensor<T> patch_w;  // [patch_dim, d]
  Tensor<T> patch_b;  // [d]
  Tensor<T> pos;      // [N, d]
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> ln_g, ln_b;

  static EncoderWeights init(const EncoderConfig& cfg, SplitMix64& rng);
  void collect(ParamList<T>& out, const std::string& prefix = "encoder.") const;
};

// One H x W x 3 image -> [N, patch^2 * 3]. Patches in row-major order; inside a
// patch, row-major pixels with channels fastest.
template <typename T>
Tensor<T> patchify(std::span<const float> pixels, std::size_t height,
                   std::size_t width, std::size_t patch_size);

// Inverse of patchify.
template <typename T>
std::vector<float> unpatchify(const Tensor<T>& patches, std::size_t height,
                              std::size_t width, std::size_t patch_size);

// Stacks per-image patches into [B*N, patch_dim]. Every image must be
// image_size x image_size.
template <typename T>
Tensor<T> patchify_batch(const std::vector<const synth::Image*>& images,
                         const EncoderConfig& cfg);

// patches [B*N, patch_dim] -> visual tokens [B*N, d]. Throws NumericError
// naming the layer whose output is non-finite.
template <typename T>
Tensor<T> encode(Graph<T>& g, const Tensor<T>& patches, std::size_t batch,
                 const EncoderWeights<T>& w, const EncoderConfig& cfg);

// Bilinear (align-corners) resampling of a [grid_from^2, d] table to
// [grid_to^2, d]. Returns a copy when the grids match.
template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& table, std::size_t grid_to);

}  // namespace capvit
