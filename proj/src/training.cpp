// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/training.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

namespace bsrn::train {

template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a.shape(), b.shape(), "l1_loss");
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.numel());
}

double cosine_lr(int t, int total, double lr0) {
  if (total < 1) throw ConfigError("cosine_lr: total iterations must be >= 1");
  if (t < 0 || t > total) {
    throw ConfigError("cosine_lr: iteration " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  }
  if (t == total) return 0.0;
  return 0.5 * lr0 * (1 + std::cos(std::numbers::pi * t / total));
}

template <typename T>
OptimizerState<T> init_adam(const ParamStore<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
void adam_step(ParamStore<T>& params, OptimizerState<T>& state, const ParamStore<T>& grads, double lr,
               const TrainConfig& cfg) {
  for (const auto& p : params.paths()) {
    if (!grads.contains(p)) throw ConfigError("adam_step: missing gradient for " + p);
  }
  ++state.step;
  const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.value(i).data();
    auto m = state.m.value(i).data();
    auto v = state.v.value(i).data();
    const auto g = grads.at(params.path(i)).data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      theta[j] = static_cast<T>(theta[j] - update);
    }
  }
}

template <typename T>
Tensor<T> augment(const Tensor<T>& x, int code) {
  if (code < 0 || code > 7) throw ConfigError("augment: code must be in 0..7, got " + std::to_string(code));
  Tensor<T> cur = x;
  for (int r = 0; r < code % 4; ++r) {
    const Shape& s = cur.shape();
    Tensor<T> next(Shape{s.n, s.c, s.w, s.h});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int i = 0; i < s.w; ++i)
          for (int j = 0; j < s.h; ++j) next.at(n, c, i, j) = cur.at(n, c, j, s.w - 1 - i);
    cur = std::move(next);
  }
  if (code >= 4) {
    const Shape& s = cur.shape();
    Tensor<T> next(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) next.at(n, c, i, j) = cur.at(n, c, i, s.w - 1 - j);
    cur = std::move(next);
  }
  return cur;
}

std::pair<Tensor<float>, Tensor<float>> augment_pair(const Tensor<float>& lr, const Tensor<float>& hr, int code) {
  return {augment(lr, code), augment(hr, code)};
}

namespace {

Tensor<float> crop(const Tensor<float>& t, int y, int x, int size) {
  const Shape& s = t.shape();
  Tensor<float> out(Shape{s.n, s.c, size, size});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) out.at(n, c, i, j) = t.at(n, c, y + i, x + j);
  return out;
}

void check_pair(const Tensor<float>& lr, const Tensor<float>& hr, int scale) {
  const Shape& l = lr.shape();
  const Shape& h = hr.shape();
  if (h.n != l.n || h.c != l.c || h.h != l.h * scale || h.w != l.w * scale) {
    throw ShapeError("patch: HR " + h.str() + " is not LR " + l.str() + " times scale " + std::to_string(scale));
  }
}

Tensor<float> stack(const std::vector<Tensor<float>>& parts) {
  const Shape& s = parts.front().shape();
  Tensor<float> out(Shape{static_cast<int>(parts.size()), s.c, s.h, s.w});
  auto dst = out.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    check_same_shape(p.shape(), s, "stack");
    std::copy(p.data().begin(), p.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.numel();
  }
  return out;
}

}  // namespace

PatchPair crop_patch(const Tensor<float>& lr, const Tensor<float>& hr, int scale, int size, int y, int x) {
  check_pair(lr, hr, scale);
  const Shape& l = lr.shape();
  if (size < 1 || size > l.h || size > l.w) {
    throw ShapeError("patch: size " + std::to_string(size) + " does not fit LR " + std::to_string(l.h) + "x" +
                     std::to_string(l.w));
  }
  if (y < 0 || x < 0 || y + size > l.h || x + size > l.w) throw ShapeError("patch: offset out of range");
  return {crop(lr, y, x, size), crop(hr, y * scale, x * scale, size * scale), y, x, y * scale, x * scale};
}

PatchPair sample_patch(const Tensor<float>& lr, const Tensor<float>& hr, int scale, int size, std::mt19937_64& rng) {
  check_pair(lr, hr, scale);
  const Shape& l = lr.shape();
  if (size < 1 || size > l.h || size > l.w) {
    throw ShapeError("patch: size " + std::to_string(size) + " does not fit LR " + std::to_string(l.h) + "x" +
                     std::to_string(l.w));
  }
  std::uniform_int_distribution<int> dy(0, l.h - size);
  std::uniform_int_distribution<int> dx(0, l.w - size);
  const int y = dy(rng);
  const int x = dx(rng);
  return crop_patch(lr, hr, scale, size, y, x);
}

TrainResult train_loop(ModelState state, const std::vector<TrainPair>& data, const TrainConfig& cfg,
                       std::ostream* progress) {
  if (data.empty()) throw ConfigError("train_loop: no training data");
  if (cfg.total_iters < 1) throw ConfigError("train_loop: total_iters must be >= 1");
  if (cfg.batch < 1) throw ConfigError("train_loop: batch must be >= 1");
  if (cfg.log_every < 1) throw ConfigError("train_loop: log_every must be >= 1");
  const int scale = state.config.scale;
  for (const auto& p : data) check_pair(p.lr, p.hr, scale);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_code(0, 7);
  OptimizerState<float> opt = init_adam(state.params);
  TrainResult result;

  for (int it = 0; it < cfg.total_iters; ++it) {
    std::vector<Tensor<float>> lr_parts;
    std::vector<Tensor<float>> hr_parts;
    for (int b = 0; b < cfg.batch; ++b) {
      const TrainPair& pair = data[data.size() == 1 ? 0 : pick(rng)];
      PatchPair patch = cfg.patch > 0 ? sample_patch(pair.lr, pair.hr, scale, cfg.patch, rng)
                                      : PatchPair{pair.lr, pair.hr, 0, 0, 0, 0};
      if (cfg.augment) {
        auto [l, h] = augment_pair(patch.lr, patch.hr, pick_code(rng));
        patch.lr = std::move(l);
        patch.hr = std::move(h);
      }
      lr_parts.push_back(std::move(patch.lr));
      hr_parts.push_back(std::move(patch.hr));
    }
    const Tensor<float> lr_batch = stack(lr_parts);
    const Tensor<float> hr_batch = stack(hr_parts);

    const ad::Leaves<float> leaves(state.params, true);
    const ad::Var<float> sr = forward(state.config, leaves, ad::Var<float>::constant(lr_batch));
    const ad::Var<float> recon = ad::l1_loss(sr, ad::Var<float>::constant(hr_batch));
    ad::Var<float> loss = recon;
    if (cfg.ortho_weight > 0) {
      loss = ad::add(loss, ad::scale(blocks::total_orthonormal_penalty(leaves), static_cast<float>(cfg.ortho_weight)));
    }
    const ParamStore<float> grads = ad::backward(loss, leaves);
    const double loss_value = loss.value()[0];
    const double rate = cosine_lr(it, cfg.total_iters, cfg.lr0);

    bool grads_finite = true;
    std::string bad_leaf;
    for (std::size_t i = 0; i < grads.size() && grads_finite; ++i) {
      if (!grads.value(i).all_finite()) {
        grads_finite = false;
        bad_leaf = grads.path(i);
      }
    }
    if (!std::isfinite(loss_value) || !grads_finite) {
      throw NumericError("train_loop: non-finite loss at iteration " + std::to_string(it) +
                         "; first non-finite gradient: " + (bad_leaf.empty() ? std::string("none") : bad_leaf));
    }

    adam_step(state.params, opt, grads, rate, cfg);

    if (it % cfg.log_every == 0 || it + 1 == cfg.total_iters) {
      result.trace.push_back({it, rate, recon.value()[0]});
      if (progress != nullptr) *progress << "iter " << it << " lr " << rate << " loss " << recon.value()[0] << "\n";
    }
    const bool last = it + 1 == cfg.total_iters;
    if (!cfg.checkpoint_dir.empty() && ((cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) || last)) {
      save_checkpoint(state, cfg.checkpoint_dir);
    }
  }
  result.state = std::move(state);
  return result;
}

void write_trace_csv(const std::vector<LossRecord>& trace, std::ostream& out) {
  out << "iter,lr,loss\n";
  out.precision(9);
  for (const auto& r : trace) out << r.iter << "," << r.lr << "," << r.loss << "\n";
}

template double l1_loss(const Tensor<float>&, const Tensor<float>&);
template double l1_loss(const Tensor<double>&, const Tensor<double>&);
template OptimizerState<float> init_adam(const ParamStore<float>&);
template OptimizerState<double> init_adam(const ParamStore<double>&);
template void adam_step(ParamStore<float>&, OptimizerState<float>&, const ParamStore<float>&, double,
                        const TrainConfig&);
template void adam_step(ParamStore<double>&, OptimizerState<double>&, const ParamStore<double>&, double,
                        const TrainConfig&);
template Tensor<float> augment(const Tensor<float>&, int);
template Tensor<double> augment(const Tensor<double>&, int);

}  // namespace bsrn::train
