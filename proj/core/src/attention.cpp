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

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "capvit/ops.hpp"
#include "kernels.hpp"

namespace capvit::ops {

namespace {

template <typename T>
std::vector<T>& grad_of(const std::shared_ptr<detail::TensorImpl<T>>& p) {
  if (p->grad.empty()) p->grad.assign(p->data.size(), T(0));
  return p->grad;
}

// Copies head `h` of example `b` from x[B*S, d] into out[S, dh].
template <typename T>
void gather_head(const T* x, T* out, std::size_t b, std::size_t h,
                 std::size_t seq, std::size_t d, std::size_t dh) {
  for (std::size_t i = 0; i < seq; ++i) {
    std::copy_n(x + (b * seq + i) * d + h * dh, dh, out + i * dh);
  }
}

template <typename T>
void scatter_head_add(const T* in, T* x, std::size_t b, std::size_t h,
                      std::size_t seq, std::size_t d, std::size_t dh) {
  for (std::size_t i = 0; i < seq; ++i) {
    T* dst = x + (b * seq + i) * d + h * dh;
    const T* src = in + i * dh;
    for (std::size_t c = 0; c < dh; ++c) dst[c] += src[c];
  }
}

struct MaskView {
  const AttentionMask& mask;
  std::size_t seq;

  bool allowed(std::size_t b, std::size_t i, std::size_t j) const {
    if (!(j < mask.prefix || j <= i)) return false;
    return mask.key_valid.empty() || mask.key_valid[b * seq + j] != 0;
  }
};

}  // namespace

template <typename T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v, const AttentionShape& shape,
                    const AttentionMask& mask) {
  const std::size_t B = shape.batch, S = shape.seq, H = shape.heads;
  const std::size_t d = q.cols();
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rows() != B * S) {
    throw DimensionError("attention: q/k/v shapes " + shape_str(q.shape()) +
                         ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()) + " do not match batch " +
                         std::to_string(B) + " x seq " + std::to_string(S));
  }
  if (H == 0 || d % H != 0) {
    throw ConfigError("attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(H) + " heads");
  }
  if (!mask.key_valid.empty() && mask.key_valid.size() != B * S) {
    throw DimensionError("attention: key_valid has " +
                         std::to_string(mask.key_valid.size()) +
                         " entries, expected " + std::to_string(B * S));
  }
  const std::size_t dh = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T bias = static_cast<T>(mask.prefix_bias);
  const MaskView mv{mask, S};

  std::vector<T> out(B * S * d, T(0));
  std::vector<T> probs(B * H * S * S, T(0));
  std::vector<T> qh(S * dh), kh(S * dh), vh(S * dh), kt(dh * S), scores(S * S),
      oh(S * dh);
  const T* qp = q.data().data();
  const T* kp = k.data().data();
  const T* vp = v.data().data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      gather_head(qp, qh.data(), b, h, S, d, dh);
      gather_head(kp, kh.data(), b, h, S, d, dh);
      gather_head(vp, vh.data(), b, h, S, d, dh);
      kernels::transpose(kh.data(), kt.data(), S, dh);
      std::fill(scores.begin(), scores.end(), T(0));
      kernels::gemm_nn(qh.data(), kt.data(), scores.data(), S, dh, S);
      T* P = probs.data() + (b * H + h) * S * S;
      for (auto& s : scores) s *= scale;
      if (bias != T(0)) {
        for (std::size_t i = mask.prefix; i < S; ++i) {
          for (std::size_t j = 0; j < mask.prefix; ++j) scores[i * S + j] += bias;
        }
      }
      for (std::size_t i = 0; i < S; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          if (mv.allowed(b, i, j)) mx = std::max(mx, scores[i * S + j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T z = T(0);
        for (std::size_t j = 0; j < S; ++j) {
          if (!mv.allowed(b, i, j)) continue;
          const T e = std::exp(scores[i * S + j] - mx);
          P[i * S + j] = e;
          z += e;
        }
        for (std::size_t j = 0; j < S; ++j) P[i * S + j] /= z;
      }
      std::fill(oh.begin(), oh.end(), T(0));
      kernels::gemm_nn(P, vh.data(), oh.data(), S, S, dh);
      scatter_head_add(oh.data(), out.data(), b, h, S, d, dh);
    }
  }

  const bool rg = g.recording() &&
                  (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Tensor<T> result(q.shape(), std::move(out), rg);
  if (rg) {
    g.record("attention", [qi = q.impl(), ki = k.impl(), vi = v.impl(),
                           oi = result.impl(), probs = std::move(probs), B, S,
                           H, d, dh, scale] {
      if (oi->grad.empty()) return;
      std::vector<T> qh(S * dh), kh(S * dh), vh(S * dh), doh(S * dh),
          dp(S * S), ds(S * S), tmp(S * dh), scratch;
      const T* dout = oi->grad.data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          const T* P = probs.data() + (b * H + h) * S * S;
          gather_head(dout, doh.data(), b, h, S, d, dh);
          gather_head(vi->data.data(), vh.data(), b, h, S, d, dh);
          if (vi->requires_grad) {
            std::fill(tmp.begin(), tmp.end(), T(0));
            kernels::gemm_tn(P, doh.data(), tmp.data(), S, S, dh);
            scatter_head_add(tmp.data(), grad_of(vi).data(), b, h, S, d, dh);
          }
          if (!qi->requires_grad && !ki->requires_grad) continue;
          std::fill(dp.begin(), dp.end(), T(0));
          kernels::gemm_nt(doh.data(), vh.data(), dp.data(), S, dh, S, scratch);
          for (std::size_t i = 0; i < S; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < S; ++j) dot += P[i * S + j] * dp[i * S + j];
            for (std::size_t j = 0; j < S; ++j) {
              ds[i * S + j] = P[i * S + j] * (dp[i * S + j] - dot) * scale;
            }
          }
          if (qi->requires_grad) {
            gather_head(ki->data.data(), kh.data(), b, h, S, d, dh);
            std::fill(tmp.begin(), tmp.end(), T(0));
            kernels::gemm_nn(ds.data(), kh.data(), tmp.data(), S, S, dh);
            scatter_head_add(tmp.data(), grad_of(qi).data(), b, h, S, d, dh);
          }
          if (ki->requires_grad) {
            gather_head(qi->data.data(), qh.data(), b, h, S, d, dh);
            std::fill(tmp.begin(), tmp.end(), T(0));
            kernels::gemm_tn(ds.data(), qh.data(), tmp.data(), S, S, dh);
            scatter_head_add(tmp.data(), grad_of(ki).data(), b, h, S, d, dh);
          }
        }
      }
    });
  }
  return result;
}

template Tensor<float> attention(Graph<float>&, const Tensor<float>&,
                                 const Tensor<float>&, const Tensor<float>&,
                                 const AttentionShape&, const AttentionMask&);
template Tensor<double> attention(Graph<double>&, const Tensor<double>&,
                                  const Tensor<double>&, const Tensor<double>&,
                                  const AttentionShape&, const AttentionMask&);

}  // namespace capvit::ops
