// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bsrn/tensor.hpp"

namespace bsrn {

/// Ordered collection of named tensors (parameter leaves, gradients, moments).
/// Iteration order is insertion order, which for models is the schema order.
template <typename T>
class ParamStore {
 public:
  void add(std::string path, Tensor<T> value) {
    if (index_.contains(path)) throw ConfigError("duplicate parameter path: " + path);
    index_.emplace(path, values_.size());
    paths_.push_back(std::move(path));
    values_.push_back(std::move(value));
  }

  [[nodiscard]] bool contains(std::string_view path) const { return index_.find(path) != index_.end(); }

  [[nodiscard]] const Tensor<T>& at(std::string_view path) const { return values_[find(path)]; }
  [[nodiscard]] Tensor<T>& at(std::string_view path) { return values_[find(path)]; }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::vector<std::string>& paths() const { return paths_; }
  [[nodiscard]] const std::string& path(std::size_t i) const { return paths_[i]; }
  [[nodiscard]] const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  [[nodiscard]] Tensor<T>& value(std::size_t i) { return values_[i]; }

  [[nodiscard]] std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  template <typename U>
  [[nodiscard]] ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(paths_[i], values_[i].template cast<U>());
    return out;
  }

  /// Zero-filled store with the same paths and shapes.
  [[nodiscard]] ParamStore zeros_like() const {
    ParamStore out;
    for (std::size_t i = 0; i < size(); ++i) out.add(paths_[i], Tensor<T>(values_[i].shape()));
    return out;
  }

 private:
  [[nodiscard]] std::size_t find(std::string_view path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw ConfigError("unknown parameter path: " + std::string(path));
    return it->second;
  }

  std::vector<std::string> paths_;
  std::vector<Tensor<T>> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Joins hierarchical path segments with '.'.
inline std::string join_path(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

}  // namespace bsrn
