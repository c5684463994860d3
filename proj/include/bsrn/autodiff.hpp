// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over the tensor-core op set.
//
// A Var is a handle to a node in a dynamically built graph. Nodes only keep
// references to their inputs when at least one input requires a gradient, so
// inference through the same code path holds no history.

#pragma once

#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bsrn/ops.hpp"
#include "bsrn/params.hpp"
#include "bsrn/tensor.hpp"

namespace bsrn::ad {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<const Node<T>>;

/// Accumulates d(loss)/d(input i) into grad_in[i]; entries are null for inputs
/// that do not require a gradient.
template <typename T>
using BackwardFn =
    std::function<void(const Node<T>& self, const Tensor<T>& grad_out, std::vector<Tensor<T>*>& grad_in)>;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<NodePtr<T>> inputs;
  BackwardFn<T> backward;
  std::string op;
  std::string leaf_path;
  bool requires_grad = false;
  /// Distance of this op's inputs from a non-differentiable point.
  double kink_margin = std::numeric_limits<double>::infinity();
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value);
  static Var leaf(Tensor<T> value, std::string path, bool requires_grad = true);

  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] const NodePtr<T>& node() const { return node_; }
  [[nodiscard]] bool defined() const { return node_ != nullptr; }

  /// Builds an op node; history is dropped when no input requires a gradient.
  static Var make(std::string op, Tensor<T> value, const std::vector<Var>& inputs, BackwardFn<T> fn,
                  double kink_margin = std::numeric_limits<double>::infinity());

 private:
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}
  NodePtr<T> node_;
};

/// Named leaf variables bound from a ParamStore.
template <typename T>
class Leaves {
 public:
  Leaves() = default;
  Leaves(const ParamStore<T>& params, bool requires_grad);

  [[nodiscard]] const Var<T>& operator[](std::string_view path) const;
  [[nodiscard]] bool contains(std::string_view path) const { return index_.find(path) != index_.end(); }
  [[nodiscard]] std::size_t size() const { return vars_.size(); }
  [[nodiscard]] const std::vector<std::string>& paths() const { return paths_; }
  [[nodiscard]] const Var<T>& var(std::size_t i) const { return vars_[i]; }

 private:
  std::vector<std::string> paths_;
  std::vector<Var<T>> vars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Prefix-relative view into Leaves, e.g. scope "body.3" resolves "esa.reduce.weight".
template <typename T>
class Scope {
 public:
  Scope(const Leaves<T>& leaves, std::string prefix) : leaves_(&leaves), prefix_(std::move(prefix)) {}

  [[nodiscard]] const Var<T>& operator()(std::string_view name) const { return (*leaves_)[join_path(prefix_, name)]; }
  [[nodiscard]] bool has(std::string_view name) const { return leaves_->contains(join_path(prefix_, name)); }
  [[nodiscard]] Scope sub(std::string_view name) const { return Scope(*leaves_, join_path(prefix_, name)); }
  [[nodiscard]] const std::string& prefix() const { return prefix_; }

 private:
  const Leaves<T>* leaves_;
  std::string prefix_;
};

/// Gradient per parameter path, same shapes as the parameters.
template <typename T>
using GradientMap = ParamStore<T>;

/// Topologically ordered record of the differentiable part of a graph.
template <typename T>
class Trace {
 public:
  explicit Trace(const Var<T>& output);

  /// Inputs before consumers; the output node is last.
  [[nodiscard]] const std::vector<const Node<T>*>& nodes() const { return nodes_; }
  /// Minimum kink margin over every recorded node.
  [[nodiscard]] double kink_margin() const { return kink_margin_; }
  [[nodiscard]] const Var<T>& output() const { return output_; }

 private:
  Var<T> output_;
  std::vector<const Node<T>*> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

/// d(loss)/d(leaf) for every leaf in `leaves`; untouched leaves get zeros.
/// The trace is not modified, so repeated calls return identical maps.
template <typename T>
GradientMap<T> backward(const Trace<T>& trace, const Leaves<T>& leaves);
template <typename T>
GradientMap<T> backward(const Var<T>& loss, const Leaves<T>& leaves);

// ---- differentiable ops --------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const ConvGeometry& geom);
template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride);
template <typename T>
Var<T> upsample(const Var<T>& x, int target_h, int target_w, Resample mode);
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r);
template <typename T>
Var<T> activate(const Var<T>& x, Activation act, double slope = 0.05);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> channel_contrast(const Var<T>& x);
/// Scalar (1,1,1,1) sum of all elements.
template <typename T>
Var<T> sum(const Var<T>& x);
/// Mean absolute difference; subgradient 0 where the difference is exactly 0.
template <typename T>
Var<T> l1_loss(const Var<T>& prediction, const Var<T>& target);
/// ||A A^T - I||_F^2 for a (R, Cin, 1, 1) weight viewed as an R x Cin matrix.
template <typename T>
Var<T> orthonormal_penalty(const Var<T>& weight);

}  // namespace bsrn::ad
