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

#include "capvit/encoder.hpp"

#include <cmath>
#include <string>

#include "capvit/error.hpp"

namespace capvit {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  block().validate("encoder");
}

template <typename T>
EncoderWeights<T> EncoderWeights<T>::init(const EncoderConfig& cfg,
                                          SplitMix64& rng) {
  cfg.validate();
  EncoderWeights w;
  w.patch_w = trunc_normal<T>({cfg.patch_dim(), cfg.width}, rng, kInitStd);
  w.patch_b = param_full<T>({cfg.width}, T(0));
  w.pos = trunc_normal<T>({cfg.tokens(), cfg.width}, rng, kInitStd);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    w.blocks.push_back(BlockWeights<T>::init(cfg.block(), rng));
  }
  w.ln_g = param_full<T>({cfg.width}, T(1));
  w.ln_b = param_full<T>({cfg.width}, T(0));
  return w;
}

template <typename T>
void EncoderWeights<T>::collect(ParamList<T>& out,
                                const std::string& prefix) const {
  out.push_back({prefix + "patch.w", patch_w, true});
  out.push_back({prefix + "patch.b", patch_b, false});
  out.push_back({prefix + "pos", pos, true});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect(out, prefix + "block" + std::to_string(l) + ".");
  }
  out.push_back({prefix + "ln.gamma", ln_g, false});
  out.push_back({prefix + "ln.beta", ln_b, false});
}

template <typename T>
Tensor<T> patchify(std::span<const float> pixels, std::size_t height,
                   std::size_t width, std::size_t patch_size) {
  if (pixels.size() != height * width * 3 || patch_size == 0 ||
      height % patch_size != 0 || width % patch_size != 0) {
    throw DimensionError("patchify: " + std::to_string(height) + "x" +
                         std::to_string(width) + " image (" +
                         std::to_string(pixels.size()) +
                         " values) cannot be cut into " +
                         std::to_string(patch_size) + "px patches");
  }
  const std::size_t gh = height / patch_size, gw = width / patch_size;
  const std::size_t pd = patch_size * patch_size * 3;
  std::vector<T> out(gh * gw * pd);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      T* dst = out.data() + (py * gw + px) * pd;
      for (std::size_t y = 0; y < patch_size; ++y) {
        const float* src =
            pixels.data() + ((py * patch_size + y) * width + px * patch_size) * 3;
        for (std::size_t i = 0; i < patch_size * 3; ++i) {
          *dst++ = static_cast<T>(src[i]);
        }
      }
    }
  }
  return Tensor<T>({gh * gw, pd}, std::move(out));
}

template <typename T>
std::vector<float> unpatchify(const Tensor<T>& patches, std::size_t height,
                              std::size_t width, std::size_t patch_size) {
  const std::size_t gw = width / patch_size;
  const std::size_t pd = patch_size * patch_size * 3;
  if (patches.numel() != height * width * 3 || patches.cols() != pd) {
    throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) +
                         " do not tile a " + std::to_string(height) + "x" +
                         std::to_string(width) + " image");
  }
  std::vector<float> pixels(height * width * 3);
  const T* src = patches.data().data();
  for (std::size_t t = 0; t < patches.rows(); ++t) {
    const std::size_t py = t / gw, px = t % gw;
    for (std::size_t y = 0; y < patch_size; ++y) {
      float* dst = pixels.data() +
                   ((py * patch_size + y) * width + px * patch_size) * 3;
      for (std::size_t i = 0; i < patch_size * 3; ++i) {
        dst[i] = static_cast<float>(*src++);
      }
    }
  }
  return pixels;
}

template <typename T>
Tensor<T> patchify_batch(const std::vector<const synth::Image*>& images,
                         const EncoderConfig& cfg) {
  const std::size_t n = cfg.tokens(), pd = cfg.patch_dim();
  std::vector<T> out;
  out.reserve(images.size() * n * pd);
  for (const synth::Image* img : images) {
    if (img->height != cfg.image_size || img->width != cfg.image_size) {
      throw DimensionError("patchify: image is " + std::to_string(img->height) +
                           "x" + std::to_string(img->width) +
                           ", encoder expects " +
                           std::to_string(cfg.image_size));
    }
    Tensor<T> p = patchify<T>(img->pixels, img->height, img->width,
                              cfg.patch_size);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>({images.size() * n, pd}, std::move(out));
}

template <typename T>
Tensor<T> encode(Graph<T>& g, const Tensor<T>& patches, std::size_t batch,
                 const EncoderWeights<T>& w, const EncoderConfig& cfg) {
  const std::size_t n = cfg.tokens();
  if (patches.rank() != 2 || patches.cols() != cfg.patch_dim() ||
      patches.rows() != batch * n) {
    throw DimensionError("encode: patches " + shape_str(patches.shape()) +
                         " do not match batch " + std::to_string(batch) +
                         " x " + std::to_string(n) + " tokens x " +
                         std::to_string(cfg.patch_dim()));
  }
  if (w.pos.dim(0) != n) {
    throw DimensionError("encode: positional table has " +
                         std::to_string(w.pos.dim(0)) + " rows for " +
                         std::to_string(n) + " tokens; interpolate it first");
  }
  Tensor<T> x = ops::linear(g, patches, w.patch_w, w.patch_b);
  x = ops::add_tiled(g, x, w.pos);
  const ops::AttentionShape shape{batch, n, cfg.heads};
  const auto mask = ops::AttentionMask::full(n);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    x = block_forward(g, x, w.blocks[l], shape, mask);
    if (!x.all_finite()) {
      throw NumericError("encode: non-finite activations after layer " +
                         std::to_string(l));
    }
  }
  return ops::layernorm(g, x, w.ln_g, w.ln_b);
}

template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& table, std::size_t grid_to) {
  const std::size_t n = table.rows(), d = table.cols();
  const auto grid_from =
      static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (table.rank() != 2 || grid_from * grid_from != n || grid_to == 0) {
    throw DimensionError("interpolate_pos: table " + shape_str(table.shape()) +
                         " is not a square grid");
  }
  if (grid_from == grid_to) {
    Tensor<T> out = table.clone();
    out.set_requires_grad(table.requires_grad());
    return out;
  }
  // Align-corners: output sample i maps to source coordinate
  // i * (grid_from - 1) / (grid_to - 1).
  auto coord = [&](std::size_t i) {
    if (grid_to == 1 || grid_from == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(grid_from - 1) /
           static_cast<double>(grid_to - 1);
  };
  const T* src = table.data().data();
  std::vector<T> out(grid_to * grid_to * d);
  for (std::size_t y = 0; y < grid_to; ++y) {
    const double sy = coord(y);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, grid_from - 1);
    const T fy = static_cast<T>(sy - static_cast<double>(y0));
    for (std::size_t x = 0; x < grid_to; ++x) {
      const double sx = coord(x);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, grid_from - 1);
      const T fx = static_cast<T>(sx - static_cast<double>(x0));
      const T* a = src + (y0 * grid_from + x0) * d;
      const T* b = src + (y0 * grid_from + x1) * d;
      const T* c = src + (y1 * grid_from + x0) * d;
      const T* e = src + (y1 * grid_from + x1) * d;
      T* dst = out.data() + (y * grid_to + x) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const T top = a[j] + fx * (b[j] - a[j]);
        const T bottom = c[j] + fx * (e[j] - c[j]);
        dst[j] = top + fy * (bottom - top);
      }
    }
  }
  return Tensor<T>({grid_to * grid_to, d}, std::move(out),
                   table.requires_grad());
}

#define CAPVIT_INSTANTIATE_ENCODER(T)                                          \
  template struct EncoderWeights<T>;                                           \
  template Tensor<T> patchify<T>(std::span<const float>, std::size_t,          \
                                 std::size_t, std::size_t);                    \
  template std::vector<float> unpatchify(const Tensor<T>&, std::size_t,        \
                                         std::size_t, std::size_t);            \
  template Tensor<T> patchify_batch<T>(const std::vector<const synth::Image*>&,\
                                       const EncoderConfig&);                  \
  template Tensor<T> encode(Graph<T>&, const Tensor<T>&, std::size_t,          \
                            const EncoderWeights<T>&, const EncoderConfig&);   \
  template Tensor<T> interpolate_pos(const Tensor<T>&, std::size_t);

CAPVIT_INSTANTIATE_ENCODER(float)
CAPVIT_INSTANTIATE_ENCODER(double)

}  // namespace capvit
