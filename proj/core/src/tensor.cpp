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

#include "capvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace capvit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
  out.impl_->grad = impl_->grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), impl_->data, false);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

IntTensor::IntTensor(Shape s, std::vector<int> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("int tensor shape " + shape_str(shape) +
                         " does not match " + std::to_string(data.size()) +
                         " ids");
  }
}

template <typename T>
void Graph<T>::record(std::string_view op, std::function<void()> backward) {
  if (consumed_) {
    nodes_.clear();
    consumed_ = false;
  }
  nodes_.push_back({op, std::move(backward)});
}

template <typename T>
void Graph<T>::backward(Tensor<T>& loss) {
  if (consumed_) {
    throw GraphError("backward() called twice without a new forward pass");
  }
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw GraphError("backward() on a loss that does not require a gradient");
  }
  loss.grad()[0] += T(1);
  last_order_.clear();
  last_order_.reserve(nodes_.size());
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    last_order_.push_back(it->op);
    it->backward();
  }
  nodes_.clear();
  consumed_ = true;
}

template <typename T>
std::vector<std::string_view> Graph<T>::op_tags() const {
  std::vector<std::string_view> tags;
  tags.reserve(nodes_.size());
  for (const auto& n : nodes_) tags.push_back(n.op);
  return tags;
}

template <typename T>
void Graph<T>::clear() {
  nodes_.clear();
  consumed_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace capvit
