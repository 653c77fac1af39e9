// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msin/errors.hpp"

namespace msin {

using Shape = std::vector<std::size_t>;

/// Boolean mask; std::vector<bool> cannot be viewed through a span.
using Mask = std::vector<std::uint8_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got " + shape_str(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
  }
}

template <typename T>
class BasicTape;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty when no gradient has been allocated
  std::string name;
  bool requires_grad = false;
};

/// Shared handle to a dense row-major array with an optional gradient slot.
///
/// Copies alias the same storage; use clone() for a deep copy. Rank is 1 or 2.
/// A rank-1 tensor of length n behaves as a 1 x n row where a matrix is
/// expected.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    check_shape(shape);
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static BasicTensor filled(Shape shape, T value, bool requires_grad = false) {
    check_shape(shape);
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor from_values(Shape shape, std::vector<T> values,
                                 bool requires_grad = false) {
    check_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    return BasicTensor(std::move(shape), std::move(values), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? s_->shape[0] : 1; }
  std::size_t cols() const { return s_->shape.back(); }

  std::span<T> values() { return s_->value; }
  std::span<const T> values() const { return s_->value; }
  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  T& operator[](std::size_t i) { return s_->value[i]; }
  const T& operator[](std::size_t i) const { return s_->value[i]; }
  T& at(std::size_t r, std::size_t c) { return s_->value[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return s_->value[r * cols() + c];
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on non-scalar " + shape_str(shape()));
    }
    return s_->value[0];
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }
  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(numel(), T(0));
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void clear_grad() { s_->grad.clear(); }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  const std::string& name() const { return s_->name; }
  void set_name(std::string name) { s_->name = std::move(name); }

  /// Deep copy of shape, values and name. The gradient is not copied.
  BasicTensor clone() const {
    BasicTensor out(s_->shape, s_->value, s_->requires_grad);
    out.s_->name = s_->name;
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> v(s_->value.begin(), s_->value.end());
    auto out = BasicTensor<U>::from_values(s_->shape, std::move(v),
                                           s_->requires_grad);
    out.set_name(s_->name);
    return out;
  }

  bool same_storage(const BasicTensor& other) const { return s_ == other.s_; }

 private:
  friend class BasicTape<T>;

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
      : s_(std::make_shared<TensorStorage<T>>()) {
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
  }

  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;

}  // namespace msin
