// Copyright 2026 The wsaed Authors.
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

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wsaed/error.hpp"

namespace wsaed {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) oss << (i ? "," : "") << shape[i];
  oss << ']';
  return oss.str();
}

namespace detail {

// Leaves elements uninitialized on resize so buffers that are about to be
// overwritten skip the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major tensor. Value type: copies own their buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    WSAED_CHECK_SHAPE(data_.size() == shape_size(shape_), "tensor of shape ",
                      shape_str(shape_), " given ", data_.size(), " values");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  // Contents are unspecified; the caller writes every element.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.data_.resize(shape_size(shape));
    t.shape_ = std::move(shape);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void reshape(Shape shape) {
    WSAED_CHECK_SHAPE(shape_size(shape) == data_.size(), "cannot reshape ",
                      shape_str(shape_), " to ", shape_str(shape));
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Releases the buffer; shape is kept so the tensor can be reallocated.
  void release() {
    Storage().swap(data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    auto out = Tensor<U>::uninitialized(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  using Storage = std::vector<T, detail::DefaultInitAllocator<T>>;
  Shape shape_;
  Storage data_;
};

// Sum in double regardless of storage type.
template <typename T>
double sum(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.values()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double mean(const Tensor<T>& t) {
  return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size());
}

}  // namespace wsaed
