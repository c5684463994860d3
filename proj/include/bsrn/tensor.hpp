// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bsrn/error.hpp"

namespace bsrn {

/// Batch, channel, height, width extents of a dense NCHW tensor.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense 4-D array in NCHW layout, W fastest. Value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  /// Pointer to the H×W plane of (n, c).
  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  /// Same data, new shape with equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v);
  [[nodiscard]] bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Rejects non-positive extents with a message naming `what`.
void validate_shape(const Shape& s, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace bsrn
