// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// BSRN assembly: replicate-concat input, shallow conv, ESDB stack, multi-depth
// fusion, long skip and pixel-shuffle reconstruction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bsrn/blocks.hpp"
#include "json.hpp"

namespace bsrn {

struct ModelConfig {
  std::string preset = "bsrn";
  int scale = 4;
  int channels = 64;
  int num_blocks = 8;
  int replication = 4;
  /// Distilled channels Cd; 0 selects channels / 2.
  int distilled = 0;
  blocks::ConvKind conv_kind = blocks::ConvKind::BSConvU;
  /// Kind of the conv after fusion.
  blocks::ConvKind refine_kind = blocks::ConvKind::BSConvU;
  Activation activation = Activation::GELU;
  double slope = 0.05;
  blocks::AttentionMode attention = blocks::AttentionMode::EsaCca;
  blocks::EsaConfig esa;
  int cca_reduction = 16;
  double rank_ratio = 0.25;

  [[nodiscard]] int distilled_channels() const { return distilled > 0 ? distilled : channels / 2; }
  [[nodiscard]] blocks::EsdbConfig esdb() const;
  /// Smallest LR height/width accepted by forward.
  [[nodiscard]] int min_input_size() const;
  /// Throws ConfigError on the first invalid field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&);
};

/// Names: bsrn, bsrn-s, bsrn-1, bsrn-2, custom (same as bsrn until edited).
ModelConfig make_preset(const std::string& name, int scale = 4);
std::vector<std::string> preset_names();

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

/// Every leaf the config requires, in schema order.
blocks::LeafList leaf_schema(const ModelConfig& cfg);

struct ModelState {
  ModelConfig config;
  ParamStore<float> params;
};

/// Kaiming-uniform (a = sqrt(5)) fan-in init for conv weights, zero biases,
/// ones for channel weights. Deterministic in `seed`.
ModelState build(const ModelConfig& cfg, std::uint64_t seed);

/// I_LR (N, 3, h, w) -> I_SR (N, 3, h*r, w*r).
template <typename T>
ad::Var<T> forward(const ModelConfig& cfg, const ad::Leaves<T>& leaves, const ad::Var<T>& lr);
Tensor<float> forward(const ModelState& state, const Tensor<float>& lr);

inline constexpr int kCheckpointSchemaVersion = 1;

/// Directory with manifest.json and params.bin; replaced atomically.
void save_checkpoint(const ModelState& state, const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);
/// As above, but the leaf table must match `expected`'s schema.
ModelState load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected);

}  // namespace bsrn
