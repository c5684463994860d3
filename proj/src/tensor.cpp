// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace bsrn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

void validate_shape(const Shape& s, const char* what) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError(std::string(what) + ": every extent must be >= 1, got " + s.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  validate_shape(shape, "Tensor");
  data_.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  validate_shape(shape, "Tensor");
  if (data_.size() != shape.numel()) {
    throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("reshape: " + shape_.str() + " -> " + shape.str() + " changes element count");
  }
  return Tensor(shape, data_);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace bsrn
