// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// Static parameter and Multi-Adds accounting. The walker here enumerates
// layers from the config directly and never touches built parameters, so it
// can be checked against them.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsrn/model.hpp"

namespace bsrn::complexity {

/// How an LR size is derived when the GT size is not a multiple of the scale.
enum class Rounding { Strict, Floor };

struct LayerRow {
  std::string path;
  std::string kind;
  std::uint64_t params = 0;
  /// Multiply-accumulates of convolutions only.
  std::uint64_t macs = 0;
  /// Informational element-op count (pooling, interpolation, gating, statistics).
  std::uint64_t other = 0;
};

struct ComplexityReport {
  ModelConfig config;
  int gt_h = 720;
  int gt_w = 1280;
  int lr_h = 0;
  int lr_w = 0;
  std::uint64_t params = 0;
  std::uint64_t multi_adds = 0;
  std::uint64_t other = 0;
  std::vector<LayerRow> rows;
};

/// LR size for a GT size; Strict throws ConfigError when indivisible.
std::pair<int, int> lr_size(int gt_h, int gt_w, int scale, Rounding rounding);

std::uint64_t count_params(const ModelConfig& cfg);
std::uint64_t count_multi_adds(const ModelConfig& cfg, int gt_h = 720, int gt_w = 1280,
                               Rounding rounding = Rounding::Strict);
ComplexityReport report(const ModelConfig& cfg, int gt_h = 720, int gt_w = 1280,
                        Rounding rounding = Rounding::Strict);

/// Params[K] / Multi-Adds[G] table plus per-layer rows when `detailed`.
std::string render_table(const ComplexityReport& r, bool detailed = false);
nlohmann::json to_json(const ComplexityReport& r, bool detailed = true);

}  // namespace bsrn::complexity
