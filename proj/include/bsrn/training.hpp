// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// L1 loss, Adam, cosine decay, dihedral augmentation, patch sampling and the
// training loop.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <vector>

#include "bsrn/model.hpp"

namespace bsrn::train {

struct TrainConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int total_iters = 1000;
  int batch = 1;
  /// LR patch side; 0 uses the whole LR image (all images must then share a size).
  int patch = 48;
  std::uint64_t seed = 0;
  bool augment = true;
  /// BSConvS orthonormal penalty weight; added only when > 0.
  double ortho_weight = 0.0;
  int log_every = 1;
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
};

/// Mean absolute difference.
template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b);

/// 0.5 * lr0 * (1 + cos(pi t / T)); rejects t outside [0, T].
double cosine_lr(int t, int total, double lr0);

template <typename T>
struct OptimizerState {
  ParamStore<T> m;
  ParamStore<T> v;
  std::int64_t step = 0;
};

template <typename T>
OptimizerState<T> init_adam(const ParamStore<T>& params);

/// Bias-corrected Adam update of every leaf in `params`; a leaf without a gradient is rejected.
template <typename T>
void adam_step(ParamStore<T>& params, OptimizerState<T>& state, const ParamStore<T>& grads, double lr,
               const TrainConfig& cfg);

/// Dihedral transform: rotate 90 degrees counter-clockwise (code % 4) times, then
/// flip horizontally when code >= 4.
template <typename T>
Tensor<T> augment(const Tensor<T>& x, int code);

struct PatchPair {
  Tensor<float> lr;
  Tensor<float> hr;
  int lr_y = 0;
  int lr_x = 0;
  int hr_y = 0;
  int hr_x = 0;
};

std::pair<Tensor<float>, Tensor<float>> augment_pair(const Tensor<float>& lr, const Tensor<float>& hr, int code);

/// Crops an LR patch at (y, x) and the HR patch at (scale*y, scale*x).
PatchPair crop_patch(const Tensor<float>& lr, const Tensor<float>& hr, int scale, int size, int y, int x);
PatchPair sample_patch(const Tensor<float>& lr, const Tensor<float>& hr, int scale, int size, std::mt19937_64& rng);

/// One training image: LR (1,3,h,w) and HR (1,3,h*r,w*r), values in [0,1].
struct TrainPair {
  Tensor<float> lr;
  Tensor<float> hr;
};

struct LossRecord {
  int iter = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainResult {
  ModelState state;
  std::vector<LossRecord> trace;
};

/// Deterministic for a given (initial state, data, config). Throws NumericError
/// naming the first leaf with a non-finite gradient when the loss diverges.
TrainResult train_loop(ModelState state, const std::vector<TrainPair>& data, const TrainConfig& cfg,
                       std::ostream* progress = nullptr);

void write_trace_csv(const std::vector<LossRecord>& trace, std::ostream& out);

}  // namespace bsrn::train
