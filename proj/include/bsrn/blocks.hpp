// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// Composite layers: convolution decompositions, BSRB, ESA, CCA, channel
// weights and the ESDB. Every block reads its parameters through a Scope, so
// the leaf layout is fixed by the declare_* functions below.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "bsrn/autodiff.hpp"

namespace bsrn::blocks {

enum class ConvKind { Standard, DSConv, BSConvU, BSConvS };

enum class AttentionMode { EsaCca, EsaOnly, CcaOnly, EsaChannelWeights, None };

std::string to_string(ConvKind kind);
std::string to_string(AttentionMode mode);
std::string to_string(Activation act);
ConvKind parse_conv_kind(std::string_view s);
AttentionMode parse_attention(std::string_view s);
Activation parse_activation(std::string_view s);

[[nodiscard]] inline bool uses_esa(AttentionMode m) {
  return m == AttentionMode::EsaCca || m == AttentionMode::EsaOnly || m == AttentionMode::EsaChannelWeights;
}
[[nodiscard]] inline bool uses_cca(AttentionMode m) {
  return m == AttentionMode::EsaCca || m == AttentionMode::CcaOnly;
}

struct ActSpec {
  Activation kind = Activation::GELU;
  double slope = 0.05;
};

struct EsaConfig {
  /// Reduced width Cf = C / reduction.
  int reduction = 4;
  int stride_kernel = 3;
  int pool_kernel = 7;
  int pool_stride = 3;
  /// Convolutions between pooling and upsampling; activation after all but the last.
  int group_convs = 3;
  /// 1x1 projection on the reduced feature before the residual add.
  bool skip_projection = true;
};

/// Smallest H (or W) the ESA pyramid accepts.
int esa_min_size(const EsaConfig& cfg);

struct EsdbConfig {
  int channels = 64;
  int distilled = 32;
  ConvKind conv_kind = ConvKind::BSConvU;
  ActSpec act;
  AttentionMode attention = AttentionMode::EsaCca;
  EsaConfig esa;
  int cca_reduction = 16;
  double rank_ratio = 0.25;
};

/// Rank of the BSConvS subspace: max(1, round(ratio * cin)).
int bsconv_s_rank(int cin, double ratio);
int cca_hidden(int channels, int reduction);

// ---- leaf layout ----------------------------------------------------------

enum class LeafRole { ConvWeight, Bias, ChannelWeight };

struct LeafSpec {
  std::string path;
  Shape shape;
  LeafRole role;
  /// Inputs feeding one output element (Cin/groups * kh * kw); 0 for non-weights.
  int fan_in = 0;
};

using LeafList = std::vector<LeafSpec>;

/// Plain convolution with bias: leaves weight, bias.
void declare_standard(LeafList& out, std::string_view prefix, int cin, int cout, int k);
/// Decomposed or standard k x k convolution of the given kind.
void declare_conv(LeafList& out, std::string_view prefix, ConvKind kind, int cin, int cout, int k,
                  double rank_ratio = 0.25);
void declare_esa(LeafList& out, std::string_view prefix, int channels, ConvKind kind, const EsaConfig& cfg,
                 double rank_ratio = 0.25);
void declare_cca(LeafList& out, std::string_view prefix, int channels, int reduction);
void declare_channel_weights(LeafList& out, std::string_view prefix, int channels);
void declare_esdb(LeafList& out, std::string_view prefix, const EsdbConfig& cfg);

// ---- forward --------------------------------------------------------------

template <typename T>
using Var = ad::Var<T>;
template <typename T>
using Scope = ad::Scope<T>;

/// Plain convolution using scope leaves weight and bias.
template <typename T>
Var<T> standard_conv(const Scope<T>& s, const Var<T>& x, int stride = 1, int pad = -1);
/// Pointwise then depthwise; leaves pw.weight, dw.weight, dw.bias.
template <typename T>
Var<T> bsconv_u(const Scope<T>& s, const Var<T>& x, int stride = 1, int pad = -1);
/// Depthwise on the input channels then pointwise; leaves dw.weight, dw.bias, pw.weight.
template <typename T>
Var<T> dsconv(const Scope<T>& s, const Var<T>& x, int stride = 1, int pad = -1);
/// Two pointwise stages through rank R then depthwise; leaves pw_a.weight, pw_b.weight, dw.weight, dw.bias.
template <typename T>
Var<T> bsconv_s(const Scope<T>& s, const Var<T>& x, int stride = 1, int pad = -1);
/// ||A A^T - I||_F^2 of the scope's pw_a weight.
template <typename T>
Var<T> bsconv_s_penalty(const Scope<T>& s);
/// Dispatch on kind. pad < 0 means k / 2.
template <typename T>
Var<T> conv(const Scope<T>& s, const Var<T>& x, ConvKind kind, int stride = 1, int pad = -1);

template <typename T>
Var<T> bsrb(const Scope<T>& s, const Var<T>& x, ConvKind kind, const ActSpec& act);
template <typename T>
Var<T> esa(const Scope<T>& s, const Var<T>& x, ConvKind kind, const EsaConfig& cfg, const ActSpec& act);
template <typename T>
Var<T> cca(const Scope<T>& s, const Var<T>& x);
/// Scales channels by the scope leaf channel_weights, shaped (1, C, 1, 1).
template <typename T>
Var<T> channel_weights(const Scope<T>& s, const Var<T>& x);
template <typename T>
Var<T> esdb_forward(const Scope<T>& s, const Var<T>& x, const EsdbConfig& cfg);

/// Sum of BSConvS penalties over every pw_a leaf in `leaves`.
template <typename T>
Var<T> total_orthonormal_penalty(const ad::Leaves<T>& leaves);

}  // namespace bsrn::blocks
