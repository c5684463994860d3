// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace bsrn::ad {

namespace {

// dst is either empty (first contribution) or already shaped like src.
template <typename T>
void accumulate(Tensor<T>* dst, Tensor<T>&& src) {
  if (dst == nullptr) return;
  if (dst->empty()) {
    *dst = std::move(src);
    return;
  }
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, std::string path, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "leaf";
  node->leaf_path = std::move(path);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::make(std::string op, Tensor<T> value, const std::vector<Var>& inputs, BackwardFn<T> fn,
                    double kink_margin) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = std::move(op);
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->kink_margin = kink_margin;
    node->inputs.reserve(inputs.size());
    for (const auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

template <typename T>
Leaves<T>::Leaves(const ParamStore<T>& params, bool requires_grad) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    index_.emplace(params.path(i), vars_.size());
    paths_.push_back(params.path(i));
    vars_.push_back(Var<T>::leaf(params.value(i), params.path(i), requires_grad));
  }
}

template <typename T>
const Var<T>& Leaves<T>::operator[](std::string_view path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("missing parameter leaf: " + std::string(path));
  return vars_[it->second];
}

template <typename T>
Trace<T>::Trace(const Var<T>& output) : output_(output) {
  std::unordered_set<const Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<const Node<T>*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    nodes_.push_back(node);
    kink_margin_ = std::min(kink_margin_, node->kink_margin);
    stack.pop_back();
  }
}

template <typename T>
GradientMap<T> backward(const Trace<T>& trace, const Leaves<T>& leaves) {
  const Node<T>* out = trace.output().node().get();
  if (out->value.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + out->value.shape().str());
  }
  std::unordered_map<const Node<T>*, Tensor<T>> grads;
  grads.emplace(out, Tensor<T>(out->value.shape(), T(1)));
  const auto& nodes = trace.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Node<T>* node = *it;
    auto g_it = grads.find(node);
    if (g_it == grads.end() || g_it->second.empty() || !node->backward) continue;
    const Tensor<T>& g = g_it->second;
    std::vector<Tensor<T>*> gin(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (node->inputs[i]->requires_grad) gin[i] = &grads[node->inputs[i].get()];
    }
    node->backward(*node, g, gin);
    if (node->leaf_path.empty()) grads.erase(node);
  }
  GradientMap<T> result;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Var<T>& leaf = leaves.var(i);
    auto g_it = grads.find(leaf.node().get());
    if (g_it != grads.end() && !g_it->second.empty()) {
      result.add(leaves.paths()[i], g_it->second);
    } else {
      result.add(leaves.paths()[i], Tensor<T>(leaf.shape()));
    }
  }
  return result;
}

template <typename T>
GradientMap<T> backward(const Var<T>& loss, const Leaves<T>& leaves) {
  return backward(Trace<T>(loss), leaves);
}

// ---- ops -----------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const ConvGeometry& geom) {
  Tensor<T> out = bsrn::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, geom);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return Var<T>::make(
      "conv2d", std::move(out), inputs,
      [geom](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        const Tensor<T>& xv = self.inputs[0]->value;
        const Tensor<T>& wv = self.inputs[1]->value;
        if (gin[0] != nullptr) accumulate(gin[0], conv2d_backward_input(g, wv, xv.shape(), geom));
        if (gin[1] != nullptr) accumulate(gin[1], conv2d_backward_weight(g, xv, wv.shape(), geom));
        if (gin.size() > 2 && gin[2] != nullptr) accumulate(gin[2], channel_sum(g));
      });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride) {
  auto r = max_pool2d_with_indices(x.value(), kernel, stride);
  const double margin = r.min_gap;
  return Var<T>::make(
      "max_pool2d", std::move(r.output), {x},
      [argmax = std::move(r.argmax)](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        accumulate(gin[0], max_pool2d_backward(g, argmax, self.inputs[0]->value.shape()));
      },
      margin);
}

template <typename T>
Var<T> upsample(const Var<T>& x, int target_h, int target_w, Resample mode) {
  return Var<T>::make("upsample", bsrn::upsample(x.value(), target_h, target_w, mode), {x},
                      [mode](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        accumulate(gin[0], upsample_backward(g, self.inputs[0]->value.shape(), mode));
                      });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  return Var<T>::make("pixel_shuffle", bsrn::pixel_shuffle(x.value(), r), {x},
                      [r](const Node<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        accumulate(gin[0], pixel_unshuffle(g, r));
                      });
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation act, double slope) {
  return Var<T>::make(
      "activate", bsrn::activate(x.value(), act, slope), {x},
      [act, slope](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        accumulate(gin[0], activate_backward(self.inputs[0]->value, g, act, slope));
      },
      x.requires_grad() ? activation_kink_margin(x.value(), act) : std::numeric_limits<double>::infinity());
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return Var<T>::make("sigmoid", bsrn::sigmoid(x.value()), {x},
                      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        Tensor<T> d(g.shape());
                        for (std::size_t i = 0; i < d.numel(); ++i) {
                          const T s = self.value[i];
                          d[i] = g[i] * s * (T(1) - s);
                        }
                        accumulate(gin[0], std::move(d));
                      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return Var<T>::make("add", bsrn::add(a.value(), b.value()), {a, b},
                      [](const Node<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        if (gin[0] != nullptr) accumulate(gin[0], Tensor<T>(g));
                        if (gin[1] != nullptr) accumulate(gin[1], Tensor<T>(g));
                      });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return Var<T>::make("sub", bsrn::sub(a.value(), b.value()), {a, b},
                      [](const Node<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        if (gin[0] != nullptr) accumulate(gin[0], Tensor<T>(g));
                        if (gin[1] != nullptr) accumulate(gin[1], bsrn::neg(g));
                      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return Var<T>::make("mul", bsrn::mul(a.value(), b.value()), {a, b},
                      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        if (gin[0] != nullptr) accumulate(gin[0], bsrn::mul(g, self.inputs[1]->value));
                        if (gin[1] != nullptr) accumulate(gin[1], bsrn::mul(g, self.inputs[0]->value));
                      });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return Var<T>::make("scale", bsrn::scale(a.value(), s), {a},
                      [s](const Node<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        accumulate(gin[0], bsrn::scale(g, s));
                      });
}

template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
  return Var<T>::make(
      "mul_channel", bsrn::mul_channel(x.value(), s.value()), {x, s},
      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        const Tensor<T>& xv = self.inputs[0]->value;
        const Tensor<T>& sv = self.inputs[1]->value;
        if (gin[0] != nullptr) accumulate(gin[0], bsrn::mul_channel(g, sv));
        if (gin[1] != nullptr) {
          const Shape& xs = xv.shape();
          const bool shared = sv.shape().n == 1;
          Tensor<T> gs(sv.shape());
          for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
              const T* gp = g.plane(n, c);
              const T* xp = xv.plane(n, c);
              double acc = 0;
              for (std::size_t i = 0; i < xs.plane(); ++i) acc += static_cast<double>(gp[i]) * xp[i];
              gs.at(shared ? 0 : n, c, 0, 0) += static_cast<T>(acc);
            }
          accumulate(gin[1], std::move(gs));
        }
      });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return Var<T>::make("concat_channels", bsrn::concat_channels(values), parts,
                      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        int c0 = 0;
                        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                          const int c = self.inputs[i]->value.shape().c;
                          if (gin[i] != nullptr) accumulate(gin[i], slice_channels(g, c0, c));
                          c0 += c;
                        }
                      });
}

template <typename T>
Var<T> channel_contrast(const Var<T>& x) {
  return Var<T>::make("channel_contrast", bsrn::channel_contrast(x.value()), {x},
                      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        accumulate(gin[0], channel_contrast_backward(self.inputs[0]->value, g));
                      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return Var<T>::make("sum", Tensor<T>::scalar(bsrn::sum(x.value())), {x},
                      [](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        accumulate(gin[0], Tensor<T>(self.inputs[0]->value.shape(), g[0]));
                      });
}

template <typename T>
Var<T> l1_loss(const Var<T>& prediction, const Var<T>& target) {
  check_same_shape(prediction.shape(), target.shape(), "l1_loss");
  const auto& p = prediction.value();
  const auto& t = target.value();
  long double acc = 0;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += std::abs(d);
    margin = std::min(margin, std::abs(d));
  }
  const double count = static_cast<double>(p.numel());
  return Var<T>::make(
      "l1_loss", Tensor<T>::scalar(static_cast<T>(acc / static_cast<long double>(count))), {prediction, target},
      [count](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        const Tensor<T>& pv = self.inputs[0]->value;
        const Tensor<T>& tv = self.inputs[1]->value;
        Tensor<T> d(pv.shape());
        const T unit = static_cast<T>(g[0] / count);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          const T diff = pv[i] - tv[i];
          d[i] = diff > T(0) ? unit : (diff < T(0) ? -unit : T(0));
        }
        if (gin[1] != nullptr) accumulate(gin[1], bsrn::neg(d));
        if (gin[0] != nullptr) accumulate(gin[0], std::move(d));
      },
      margin);
}

template <typename T>
Var<T> orthonormal_penalty(const Var<T>& weight) {
  const Shape& ws = weight.shape();
  if (ws.h != 1 || ws.w != 1) throw ShapeError("orthonormal_penalty: expects a 1x1 weight, got " + ws.str());
  const int rows = ws.n;
  const int cols = ws.c;
  const auto& a = weight.value();
  // M = A A^T - I
  auto residual = [rows, cols](const Tensor<T>& av) {
    std::vector<double> m(static_cast<std::size_t>(rows) * rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < rows; ++j) {
        double acc = 0;
        for (int k = 0; k < cols; ++k) acc += static_cast<double>(av[i * cols + k]) * av[j * cols + k];
        m[i * rows + j] = acc - (i == j ? 1.0 : 0.0);
      }
    return m;
  };
  double value = 0;
  for (double v : residual(a)) value += v * v;
  return Var<T>::make("orthonormal_penalty", Tensor<T>::scalar(static_cast<T>(value)), {weight},
                      [rows, cols, residual](const Node<T>& self, const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                        const Tensor<T>& av = self.inputs[0]->value;
                        const auto m = residual(av);
                        Tensor<T> d(av.shape());
                        for (int i = 0; i < rows; ++i)
                          for (int k = 0; k < cols; ++k) {
                            double acc = 0;
                            for (int j = 0; j < rows; ++j) acc += m[i * rows + j] * av[j * cols + k];
                            d[i * cols + k] = static_cast<T>(4.0 * acc * g[0]);
                          }
                        accumulate(gin[0], std::move(d));
                      });
}

#define BSRN_INSTANTIATE_AD(T)                                                                    \
  template class Var<T>;                                                                          \
  template class Leaves<T>;                                                                       \
  template class Trace<T>;                                                                        \
  template GradientMap<T> backward(const Trace<T>&, const Leaves<T>&);                            \
  template GradientMap<T> backward(const Var<T>&, const Leaves<T>&);                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,              \
                         const ConvGeometry&);                                                    \
  template Var<T> max_pool2d(const Var<T>&, int, int);                                            \
  template Var<T> upsample(const Var<T>&, int, int, Resample);                                    \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                              \
  template Var<T> activate(const Var<T>&, Activation, double);                                    \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> mul_channel(const Var<T>&, const Var<T>&);                                      \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
  template Var<T> channel_contrast(const Var<T>&);                                                \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);                                          \
  template Var<T> orthonormal_penalty(const Var<T>&);

BSRN_INSTANTIATE_AD(float)
BSRN_INSTANTIATE_AD(double)

}  // namespace bsrn::ad
