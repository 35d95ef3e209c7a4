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

#include "capvit/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "capvit/error.hpp"

namespace capvit {

template <typename T>
AdamW<T>::AdamW(AdamWConfig cfg, const ParamList<T>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(ParamList<T>& params, double lr) {
  if (params.size() != m_.size()) {
    throw ConfigError("AdamW: parameter list changed size");
  }
  for (auto& p : params) {
    if (p.tensor.numel() != m_[&p - params.data()].size()) {
      throw DimensionError("AdamW: parameter " + p.name + " changed shape");
    }
    if (!p.tensor.has_grad()) continue;
    for (T gv : p.tensor.grad()) {
      if (!std::isfinite(gv)) {
        throw NumericError("AdamW: non-finite gradient in " + p.name);
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto data = p.tensor.data();
    const bool has = p.tensor.has_grad();
    auto grad = p.tensor.grad();
    const T decay = p.decay ? static_cast<T>(lr * cfg_.weight_decay) : T(0);
    const T step = static_cast<T>(lr);
    const T inv_c1 = static_cast<T>(1.0 / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T g = has ? grad[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] * inv_c1;
      const T vhat = v[j] * inv_c2;
      data[j] -= step * (mhat / (std::sqrt(vhat) + eps)) + decay * data[j];
    }
  }
}

template <typename T>
double global_grad_norm(const ParamList<T>& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : std::as_const(p.tensor).grad()) {
      ss += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(ParamList<T>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g *= s;
    }
  }
  return norm;
}

double LrSchedule::lr_at(std::size_t step) const {
  if (step >= total) return 0.0;
  if (step < warmup) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template class AdamW<float>;
template class AdamW<double>;
template double global_grad_norm(const ParamList<float>&);
template double global_grad_norm(const ParamList<double>&);
template double clip_grad_norm(ParamList<float>&, double);
template double clip_grad_norm(ParamList<double>&, double);

}  // namespace capvit
