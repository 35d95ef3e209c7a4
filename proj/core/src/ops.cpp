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

#include "capvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kernels.hpp"

namespace capvit::ops {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
bool tracks(const Graph<T>& g, std::initializer_list<const Tensor<T>*> ins) {
  if (!g.recording()) return false;
  for (const Tensor<T>* t : ins) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
std::vector<T>& grad_of(const ImplPtr<T>& p) {
  if (p->grad.empty()) p->grad.assign(p->data.size(), T(0));
  return p->grad;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a,
                        const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " +
                         shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

inline Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> c(m * n, T(0));
  kernels::gemm_nn(a.data().data(), b.data().data(), c.data(), m, k, n);
  const bool rg = tracks(g, {&a, &b});
  Tensor<T> out({m, n}, std::move(c), rg);
  if (rg) {
    g.record("matmul", [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k,
                        n] {
      if (oi->grad.empty()) return;
      const T* dc = oi->grad.data();
      if (ai->requires_grad) {
        std::vector<T> scratch;
        kernels::gemm_nt(dc, bi->data.data(), grad_of(ai).data(), m, n, k,
                         scratch);
      }
      if (bi->requires_grad) {
        kernels::gemm_tn(ai->data.data(), dc, grad_of(bi).data(), m, k, n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias) {
  if (w.rank() != 2 || x.cols() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.rows(), k = w.dim(0), n = w.dim(1);
  if (bias.defined() && (bias.numel() != n)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) +
                         " does not match output width " + std::to_string(n));
  }
  std::vector<T> y(rows * n, T(0));
  if (bias.defined()) {
    const T* bp = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(bp, bp + n, y.data() + r * n);
    }
  }
  kernels::gemm_nn(x.data().data(), w.data().data(), y.data(), rows, k, n);
  const bool rg = tracks(g, {&x, &w, &bias});
  Tensor<T> out(with_last(x.shape(), n), std::move(y), rg);
  if (rg) {
    g.record("linear", [xi = x.impl(), wi = w.impl(),
                        bi = bias.defined() ? bias.impl() : nullptr,
                        oi = out.impl(), rows, k, n] {
      if (oi->grad.empty()) return;
      const T* dy = oi->grad.data();
      if (xi->requires_grad) {
        std::vector<T> scratch;
        kernels::gemm_nt(dy, wi->data.data(), grad_of(xi).data(), rows, n, k,
                         scratch);
      }
      if (wi->requires_grad) {
        kernels::gemm_tn(xi->data.data(), dy, grad_of(wi).data(), rows, k, n);
      }
      if (bi && bi->requires_grad) {
        T* db = grad_of(bi).data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dyr = dy + r * n;
          for (std::size_t j = 0; j < n; ++j) db[j] += dyr[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: expected rank 2, got " +
                         shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> y(m * n);
  kernels::transpose(a.data().data(), y.data(), m, n);
  const bool rg = tracks(g, {&a});
  Tensor<T> out({n, m}, std::move(y), rg);
  if (rg) {
    g.record("transpose", [ai = a.impl(), oi = out.impl(), m, n] {
      if (oi->grad.empty()) return;
      auto& ga = grad_of(ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += oi->grad[j * m + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  }
  const bool rg = tracks(g, {&a});
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()),
                rg);
  if (rg) {
    g.record("reshape", [ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> y(a.numel());
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ap[i] + bp[i];
  const bool rg = tracks(g, {&a, &b});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("add", [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      for (const auto& p : {ai, bi}) {
        if (!p->requires_grad) continue;
        auto& gp = grad_of(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += oi->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> y(a.numel());
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ap[i] * bp[i];
  const bool rg = tracks(g, {&a, &b});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("mul", [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      if (ai->requires_grad) {
        auto& ga = grad_of(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = grad_of(bi);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dy[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_row(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t d = x.cols();
  if (v.numel() != d) {
    throw DimensionError("add_row: vector " + shape_str(v.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<T> y(x.data().begin(), x.data().end());
  const T* vp = v.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] += vp[j];
  }
  const bool rg = tracks(g, {&x, &v});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("add_row", [xi = x.impl(), vi = v.impl(), oi = out.impl(), rows,
                         d] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      if (xi->requires_grad) {
        auto& gx = grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i];
      }
      if (vi->requires_grad) {
        auto& gv = grad_of(vi);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) gv[j] += dy[r * d + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_tiled(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& table) {
  const std::size_t d = x.cols();
  if (table.rank() != 2 || table.dim(1) != d || x.rows() % table.dim(0) != 0) {
    throw DimensionError("add_tiled: table " + shape_str(table.shape()) +
                         " does not tile " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), period = table.dim(0);
  std::vector<T> y(x.data().begin(), x.data().end());
  const T* tp = table.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* tr = tp + (r % period) * d;
    T* yr = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] += tr[j];
  }
  const bool rg = tracks(g, {&x, &table});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("add_tiled", [xi = x.impl(), ti = table.impl(), oi = out.impl(),
                           rows, period, d] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      if (xi->requires_grad) {
        auto& gx = grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i];
      }
      if (ti->requires_grad) {
        auto& gt = grad_of(ti);
        for (std::size_t r = 0; r < rows; ++r) {
          T* gr = gt.data() + (r % period) * d;
          for (std::size_t j = 0; j < d; ++j) gr[j] += dy[r * d + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor) {
  std::vector<T> y(a.data().begin(), a.data().end());
  for (T& v : y) v *= factor;
  const bool rg = tracks(g, {&a});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("scale", [ai = a.impl(), oi = out.impl(), factor] {
      if (oi->grad.empty()) return;
      auto& ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: expected a one-element factor, got " +
                         shape_str(s.shape()));
  }
  const T f = s.data()[0];
  std::vector<T> y(a.data().begin(), a.data().end());
  for (T& v : y) v *= f;
  const bool rg = tracks(g, {&a, &s});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("mul_scalar", [ai = a.impl(), si = s.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      const T f = si->data[0];
      if (ai->requires_grad) {
        auto& ga = grad_of(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * f;
      }
      if (si->requires_grad) {
        T acc = T(0);
        for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * ai->data[i];
        grad_of(si)[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(Graph<T>& g, const Tensor<T>& a) {
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(a.data()[i]);
  const bool rg = tracks(g, {&a});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("exp", [ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += oi->grad[i] * oi->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> clamp(Graph<T>& g, const Tensor<T>& a, T lo, T hi) {
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::clamp(a.data()[i], lo, hi);
  }
  const bool rg = tracks(g, {&a});
  Tensor<T> out(a.shape(), std::move(y), rg);
  if (rg) {
    g.record("clamp", [ai = a.impl(), oi = out.impl(), lo, hi] {
      if (oi->grad.empty()) return;
      auto& ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const T x = ai->data[i];
        if (x >= lo && x <= hi) ga[i] += oi->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const bool rg = tracks(g, {&a});
  Tensor<T> out({1}, {acc}, rg);
  if (rg) {
    g.record("sum", [ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      const T d = oi->grad[0];
      for (T& v : grad_of(ai)) v += d;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& a) {
  return scale(g, sum(g, a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const T* xp = x.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (std::isnan(xp[i])) throw NumericError("softmax: NaN in input");
  }
  std::vector<T> y(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xp[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xp[base + j * inner]);
      T z = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xp[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("softmax", [xi = x.impl(), oi = out.impl(), outer, inner, n] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      const auto& yv = oi->data;
      auto& gx = grad_of(xi);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            dot += dy[base + j * inner] * yv[base + j * inner];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += yv[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps) {
  const std::size_t d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layernorm: affine " + shape_str(gamma.shape()) +
                         "/" + shape_str(beta.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layernorm: eps must be positive");
  const std::size_t rows = x.rows();
  std::vector<T> y(x.numel()), xhat(x.numel()), rstd(rows);
  const T* xp = x.data().data();
  const T* gp = gamma.data().data();
  const T* bp = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      y[r * d + j] = h * gp[j] + bp[j];
    }
  }
  const bool rg = tracks(g, {&x, &gamma, &beta});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("layernorm", [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(),
                           oi = out.impl(), xhat = std::move(xhat),
                           rstd = std::move(rstd), rows, d] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        auto* gg = gi->requires_grad ? grad_of(gi).data() : nullptr;
        auto* gb = bi->requires_grad ? grad_of(bi).data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            const T dv = dy[r * d + j];
            if (gg) gg[j] += dv * xhat[r * d + j];
            if (gb) gb[j] += dv;
          }
        }
      }
      if (xi->requires_grad) {
        auto& gx = grad_of(xi);
        const T* gam = gi->data.data();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_dh = T(0), sum_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * gam[j];
            sum_dh += dh;
            sum_dh_h += dh * xhat[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * gam[j];
            gx[r * d + j] += rstd[r] * (dh - inv_d * sum_dh -
                                        xhat[r * d + j] * inv_d * sum_dh_h);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = static_cast<T>(0.044715);
  std::vector<T> y(x.numel());
  const T* xp = x.data().data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = xp[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("gelu", [xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T v = xi->data[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        gx[i] += oi->grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding_lookup(Graph<T>& g, const Tensor<T>& table,
                           const IntTensor& ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids.data) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " out of range for table with " +
                       std::to_string(vocab) + " rows");
    }
  }
  std::vector<T> y(ids.numel() * d);
  const T* tp = table.data().data();
  for (std::size_t i = 0; i < ids.numel(); ++i) {
    std::copy(tp + ids.data[i] * d, tp + (ids.data[i] + 1) * d,
              y.data() + i * d);
  }
  Shape shape = ids.shape;
  shape.push_back(d);
  const bool rg = tracks(g, {&table});
  Tensor<T> out(std::move(shape), std::move(y), rg);
  if (rg) {
    g.record("embedding_lookup", [ti = table.impl(), oi = out.impl(),
                                  idv = ids.data, d] {
      if (oi->grad.empty()) return;
      auto& gt = grad_of(ti);
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* row = gt.data() + idv[i] * d;
        const T* src = oi->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits,
                        std::span<const int> targets, int ignore_id) {
  const std::size_t vocab = logits.cols();
  const std::size_t rows = logits.rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range for vocabulary of " +
                       std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) {
    throw DegenerateBatchError("cross_entropy: every target is ignored");
  }
  const T* lp = logits.data().data();
  std::vector<T> lse(rows, T(0));
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    const T* row = lp + r * vocab;
    T mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    lse[r] = mx + std::log(z);
    total += lse[r] - row[targets[r]];
  }
  const T inv = T(1) / static_cast<T>(count);
  const bool rg = tracks(g, {&logits});
  Tensor<T> out({1}, {total * inv}, rg);
  if (rg) {
    g.record("cross_entropy", [li = logits.impl(), oi = out.impl(),
                               tv = std::vector<int>(targets.begin(),
                                                     targets.end()),
                               lse = std::move(lse), rows, vocab, ignore_id,
                               inv] {
      if (oi->grad.empty()) return;
      const T scale = oi->grad[0] * inv;
      auto& gl = grad_of(li);
      for (std::size_t r = 0; r < rows; ++r) {
        if (tv[r] == ignore_id) continue;
        const T* row = li->data.data() + r * vocab;
        T* gr = gl.data() + r * vocab;
        for (std::size_t j = 0; j < vocab; ++j) {
          gr[j] += scale * std::exp(row[j] - lse[r]);
        }
        gr[tv[r]] -= scale;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_sequences(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                           std::size_t batch) {
  const std::size_t d = a.cols();
  if (b.cols() != d || a.rows() % batch != 0 || b.rows() % batch != 0) {
    throw DimensionError("concat_sequences: cannot join " +
                         shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " over batch " +
                         std::to_string(batch));
  }
  const std::size_t sa = a.rows() / batch, sb = b.rows() / batch;
  const std::size_t s = sa + sb;
  std::vector<T> y(batch * s * d);
  for (std::size_t e = 0; e < batch; ++e) {
    std::copy_n(a.data().data() + e * sa * d, sa * d, y.data() + e * s * d);
    std::copy_n(b.data().data() + e * sb * d, sb * d,
                y.data() + (e * s + sa) * d);
  }
  const bool rg = tracks(g, {&a, &b});
  Tensor<T> out({batch * s, d}, std::move(y), rg);
  if (rg) {
    g.record("concat_sequences", [ai = a.impl(), bi = b.impl(),
                                  oi = out.impl(), batch, sa, sb, d] {
      if (oi->grad.empty()) return;
      const std::size_t s = sa + sb;
      const T* dy = oi->grad.data();
      if (ai->requires_grad) {
        auto& ga = grad_of(ai);
        for (std::size_t e = 0; e < batch; ++e) {
          for (std::size_t i = 0; i < sa * d; ++i) {
            ga[e * sa * d + i] += dy[e * s * d + i];
          }
        }
      }
      if (bi->requires_grad) {
        auto& gb = grad_of(bi);
        for (std::size_t e = 0; e < batch; ++e) {
          for (std::size_t i = 0; i < sb * d; ++i) {
            gb[e * sb * d + i] += dy[(e * s + sa) * d + i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_sequences(Graph<T>& g, const Tensor<T>& x, std::size_t batch,
                          std::size_t start, std::size_t len) {
  const std::size_t d = x.cols();
  if (x.rows() % batch != 0 || start + len > x.rows() / batch || len == 0) {
    throw DimensionError("slice_sequences: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " +
                         shape_str(x.shape()) + " over batch " +
                         std::to_string(batch));
  }
  const std::size_t s = x.rows() / batch;
  std::vector<T> y(batch * len * d);
  for (std::size_t e = 0; e < batch; ++e) {
    std::copy_n(x.data().data() + (e * s + start) * d, len * d,
                y.data() + e * len * d);
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out({batch * len, d}, std::move(y), rg);
  if (rg) {
    g.record("slice_sequences", [xi = x.impl(), oi = out.impl(), batch, s,
                                 start, len, d] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (std::size_t e = 0; e < batch; ++e) {
        for (std::size_t i = 0; i < len * d; ++i) {
          gx[(e * s + start) * d + i] += oi->grad[e * len * d + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& x,
                      std::span<const std::size_t> rows) {
  const std::size_t d = x.cols(), total = x.rows();
  for (std::size_t r : rows) {
    if (r >= total) {
      throw IndexError("gather_rows: row " + std::to_string(r) +
                       " out of range for " + shape_str(x.shape()));
    }
  }
  std::vector<T> y(rows.size() * d);
  const T* xp = x.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xp + rows[i] * d, d, y.data() + i * d);
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out({rows.size(), d}, std::move(y), rg);
  if (rg) {
    g.record("gather_rows", [xi = x.impl(), oi = out.impl(),
                             rv = std::vector<std::size_t>(rows.begin(),
                                                           rows.end()),
                             d] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (std::size_t i = 0; i < rv.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[rv[i] * d + j] += oi->grad[i * d + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_pool(Graph<T>& g, const Tensor<T>& x, std::size_t batch) {
  const std::size_t d = x.cols();
  if (batch == 0 || x.rows() % batch != 0) {
    throw DimensionError("mean_pool: " + shape_str(x.shape()) +
                         " not divisible into batch " + std::to_string(batch));
  }
  const std::size_t s = x.rows() / batch;
  const T inv = T(1) / static_cast<T>(s);
  std::vector<T> y(batch * d, T(0));
  const T* xp = x.data().data();
  for (std::size_t e = 0; e < batch; ++e) {
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t j = 0; j < d; ++j) y[e * d + j] += xp[(e * s + t) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) y[e * d + j] *= inv;
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out({batch, d}, std::move(y), rg);
  if (rg) {
    g.record("mean_pool", [xi = x.impl(), oi = out.impl(), batch, s, d, inv] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (std::size_t e = 0; e < batch; ++e) {
        for (std::size_t t = 0; t < s; ++t) {
          for (std::size_t j = 0; j < d; ++j) {
            gx[(e * s + t) * d + j] += oi->grad[e * d + j] * inv;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(Graph<T>& g, const Tensor<T>& x, T eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  std::vector<T> y(x.numel()), norms(rows);
  const T* xp = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = T(0);
    for (std::size_t j = 0; j < d; ++j) ss += xp[r * d + j] * xp[r * d + j];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xp[r * d + j] / norms[r];
  }
  const bool rg = tracks(g, {&x});
  Tensor<T> out(x.shape(), std::move(y), rg);
  if (rg) {
    g.record("l2_normalize", [xi = x.impl(), oi = out.impl(),
                              norms = std::move(norms), rows, d, eps_v = eps] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& dy = oi->grad;
      const auto& yv = oi->data;
      for (std::size_t r = 0; r < rows; ++r) {
        // Below eps the denominator is a constant.
        const bool clamped = norms[r] == eps_v;
        T dot = T(0);
        if (!clamped) {
          for (std::size_t j = 0; j < d; ++j) dot += yv[r * d + j] * dy[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += (dy[r * d + j] - yv[r * d + j] * dot) / norms[r];
        }
      }
    });
  }
  return out;
}

#define CAPVIT_INSTANTIATE_OPS(T)                                             \
  template Tensor<T> matmul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> linear(Graph<T>&, const Tensor<T>&, const Tensor<T>&,    \
                            const Tensor<T>&);                                \
  template Tensor<T> transpose(Graph<T>&, const Tensor<T>&);                  \
  template Tensor<T> reshape(Graph<T>&, const Tensor<T>&, Shape);             \
  template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> add_row(Graph<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> add_tiled(Graph<T>&, const Tensor<T>&,                   \
                               const Tensor<T>&);                             \
  template Tensor<T> scale(Graph<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> mul_scalar(Graph<T>&, const Tensor<T>&,                  \
                                const Tensor<T>&);                            \
  template Tensor<T> exp(Graph<T>&, const Tensor<T>&);                        \
  template Tensor<T> clamp(Graph<T>&, const Tensor<T>&, T, T);                \
  template Tensor<T> sum(Graph<T>&, const Tensor<T>&);                        \
  template Tensor<T> mean(Graph<T>&, const Tensor<T>&);                       \
  template Tensor<T> softmax(Graph<T>&, const Tensor<T>&, std::size_t);       \
  template Tensor<T> layernorm(Graph<T>&, const Tensor<T>&, const Tensor<T>&, \
                               const Tensor<T>&, T);                          \
  template Tensor<T> gelu(Graph<T>&, const Tensor<T>&);                       \
  template Tensor<T> embedding_lookup(Graph<T>&, const Tensor<T>&,            \
                                      const IntTensor&);                      \
  template Tensor<T> cross_entropy(Graph<T>&, const Tensor<T>&,               \
                                   std::span<const int>, int);                \
  template Tensor<T> concat_sequences(Graph<T>&, const Tensor<T>&,            \
                                      const Tensor<T>&, std::size_t);         \
  template Tensor<T> slice_sequences(Graph<T>&, const Tensor<T>&,             \
                                     std::size_t, std::size_t, std::size_t);  \
  template Tensor<T> gather_rows(Graph<T>&, const Tensor<T>&,                 \
                                 std::span<const std::size_t>);               \
  template Tensor<T> mean_pool(Graph<T>&, const Tensor<T>&, std::size_t);     \
  template Tensor<T> l2_normalize(Graph<T>&, const Tensor<T>&, T);

CAPVIT_INSTANTIATE_OPS(float)
CAPVIT_INSTANTIATE_OPS(double)

}  // namespace capvit::ops
