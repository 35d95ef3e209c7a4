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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capvit/error.hpp"

namespace capvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor. A Tensor is a handle: copies share storage, the
// way activations and parameters are passed around a training step. Use
// clone() for an independent deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }
  // Size of the trailing axis; leading axes are treated as rows.
  std::size_t cols() const { return impl_->shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient view; allocates a zero gradient on first use.
  std::span<T> grad();
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();

  Tensor clone() const;
  // Same data, new shape; the result shares nothing with this tensor.
  Tensor reshaped(Shape shape) const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  bool all_finite() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Integer tensor for ids and indices (no gradient).
struct IntTensor {
  Shape shape;
  std::vector<int> data;

  IntTensor() = default;
  IntTensor(Shape s, std::vector<int> d);
  std::size_t numel() const { return data.size(); }
};

// Tape of op applications. Ops append a backward closure when any input
// requires a gradient; backward() replays the closures in exact reverse
// insertion order and then consumes the tape.
template <typename T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::string_view op, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure. Throws
  // GraphError when called again before a new forward op is recorded.
  void backward(Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string_view> op_tags() const;
  // Op tags in the order the last backward() visited them.
  const std::vector<std::string_view>& last_backward_order() const {
    return last_order_;
  }
  void clear();

 private:
  struct Node {
    std::string_view op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::string_view> last_order_;
  bool recording_ = true;
  bool consumed_ = false;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace capvit
