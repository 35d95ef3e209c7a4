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

#include "capvit/params.hpp"

namespace capvit {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double eps = 1e-8;
};

// AdamW with bias correction and decoupled weight decay:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Decay applies only to parameters flagged `decay`.
template <typename T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const ParamList<T>& params);

  // Throws NumericError, leaving parameters and moments untouched, when any
  // gradient is non-finite.
  void step(ParamList<T>& params, double lr);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

template <typename T>
double global_grad_norm(const ParamList<T>& params);

// Rescales all gradients so the global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(ParamList<T>& params, double max_norm);

// Linear warmup from 0 to peak over `warmup` steps, then cosine decay to 0
// at `total`. Update k (1-based) of a stage uses lr_at(k).
struct LrSchedule {
  std::size_t total = 0;
  std::size_t warmup = 0;
  double peak = 0.0;

  double lr_at(std::size_t step) const;
};

}  // namespace capvit
