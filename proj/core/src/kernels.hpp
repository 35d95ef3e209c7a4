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

// Internal dense kernels shared by the op implementations. All loops keep a
// fixed ascending reduction order per output element.

#pragma once

#include <cstddef>
#include <vector>

namespace capvit::kernels {

// c[m,n] += a[m,k] b[k,n]
template <typename T>
inline void gemm_nn(const T* __restrict a, const T* __restrict b,
                    T* __restrict c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[k,n] += a[m,k]ᵀ b[m,n]
template <typename T>
inline void gemm_tn(const T* __restrict a, const T* __restrict b,
                    T* __restrict c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* __restrict bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// out[n,m] = in[m,n]ᵀ
template <typename T>
inline void transpose(const T* in, T* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
}

// c[m,n] += a[m,k] b[n,k]ᵀ, via an explicit transpose so the inner loop
// stays a vectorizable axpy.
template <typename T>
inline void gemm_nt(const T* a, const T* b, T* c, std::size_t m,
                    std::size_t k, std::size_t n, std::vector<T>& scratch) {
  scratch.resize(k * n);
  transpose(b, scratch.data(), n, k);
  gemm_nn(a, scratch.data(), c, m, k, n);
}

}  // namespace capvit::kernels
