// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/blocks.hpp"

#include <cctype>
#include <cmath>
#include <optional>

namespace bsrn::blocks {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int resolve_pad(int pad, int k) { return pad < 0 ? k / 2 : pad; }

template <typename T>
Var<T> pointwise(const Scope<T>& s, const Var<T>& x) {
  return standard_conv(s, x, 1, 0);
}

}  // namespace

std::string to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::Standard: return "standard";
    case ConvKind::DSConv: return "dsconv";
    case ConvKind::BSConvU: return "bsconv_u";
    case ConvKind::BSConvS: return "bsconv_s";
  }
  return "?";
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::EsaCca: return "esa+cca";
    case AttentionMode::EsaOnly: return "esa";
    case AttentionMode::CcaOnly: return "cca";
    case AttentionMode::EsaChannelWeights: return "esa+cw";
    case AttentionMode::None: return "none";
  }
  return "?";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::ReLU: return "relu";
    case Activation::LeakyReLU: return "lrelu";
    case Activation::HSwish: return "hswish";
    case Activation::GELU: return "gelu";
  }
  return "?";
}

ConvKind parse_conv_kind(std::string_view s) {
  const std::string v = lower(s);
  if (v == "standard" || v == "std") return ConvKind::Standard;
  if (v == "dsconv") return ConvKind::DSConv;
  if (v == "bsconv_u" || v == "bsconvu") return ConvKind::BSConvU;
  if (v == "bsconv_s" || v == "bsconvs") return ConvKind::BSConvS;
  throw ConfigError("unknown conv kind: " + std::string(s));
}

AttentionMode parse_attention(std::string_view s) {
  const std::string v = lower(s);
  if (v == "esa+cca") return AttentionMode::EsaCca;
  if (v == "esa") return AttentionMode::EsaOnly;
  if (v == "cca") return AttentionMode::CcaOnly;
  if (v == "esa+cw") return AttentionMode::EsaChannelWeights;
  if (v == "none") return AttentionMode::None;
  throw ConfigError("unknown attention mode: " + std::string(s));
}

Activation parse_activation(std::string_view s) {
  const std::string v = lower(s);
  if (v == "relu") return Activation::ReLU;
  if (v == "lrelu" || v == "leaky_relu" || v == "leakyrelu") return Activation::LeakyReLU;
  if (v == "hswish" || v == "h_swish") return Activation::HSwish;
  if (v == "gelu") return Activation::GELU;
  throw ConfigError("unknown activation: " + std::string(s));
}

int esa_min_size(const EsaConfig& cfg) { return (cfg.pool_kernel - 1) * 2 + cfg.stride_kernel; }

int bsconv_s_rank(int cin, double ratio) {
  if (!(ratio > 0)) throw ConfigError("bsconv_s: rank ratio must be positive");
  const int r = static_cast<int>(std::lround(ratio * cin));
  return std::max(1, r);
}

int cca_hidden(int channels, int reduction) {
  if (reduction < 1) throw ConfigError("cca: reduction must be >= 1");
  return std::max(1, channels / reduction);
}

// ---- leaf layout ----------------------------------------------------------

void declare_standard(LeafList& out, std::string_view prefix, int cin, int cout, int k) {
  out.push_back({join_path(prefix, "weight"), Shape{cout, cin, k, k}, LeafRole::ConvWeight, cin * k * k});
  out.push_back({join_path(prefix, "bias"), Shape{1, cout, 1, 1}, LeafRole::Bias, 0});
}

void declare_conv(LeafList& out, std::string_view prefix, ConvKind kind, int cin, int cout, int k,
                  double rank_ratio) {
  auto leaf = [&](std::string_view name, Shape shape, LeafRole role, int fan_in) {
    out.push_back({join_path(prefix, name), shape, role, fan_in});
  };
  switch (kind) {
    case ConvKind::Standard:
      declare_standard(out, prefix, cin, cout, k);
      break;
    case ConvKind::BSConvU:
      leaf("pw.weight", Shape{cout, cin, 1, 1}, LeafRole::ConvWeight, cin);
      leaf("dw.weight", Shape{cout, 1, k, k}, LeafRole::ConvWeight, k * k);
      leaf("dw.bias", Shape{1, cout, 1, 1}, LeafRole::Bias, 0);
      break;
    case ConvKind::DSConv:
      leaf("dw.weight", Shape{cin, 1, k, k}, LeafRole::ConvWeight, k * k);
      leaf("dw.bias", Shape{1, cin, 1, 1}, LeafRole::Bias, 0);
      leaf("pw.weight", Shape{cout, cin, 1, 1}, LeafRole::ConvWeight, cin);
      break;
    case ConvKind::BSConvS: {
      const int r = bsconv_s_rank(cin, rank_ratio);
      leaf("pw_a.weight", Shape{r, cin, 1, 1}, LeafRole::ConvWeight, cin);
      leaf("pw_b.weight", Shape{cout, r, 1, 1}, LeafRole::ConvWeight, r);
      leaf("dw.weight", Shape{cout, 1, k, k}, LeafRole::ConvWeight, k * k);
      leaf("dw.bias", Shape{1, cout, 1, 1}, LeafRole::Bias, 0);
      break;
    }
  }
}

void declare_esa(LeafList& out, std::string_view prefix, int channels, ConvKind kind, const EsaConfig& cfg,
                 double rank_ratio) {
  if (cfg.reduction < 1 || channels / cfg.reduction < 1) throw ConfigError("esa: reduction leaves no channels");
  const int f = channels / cfg.reduction;
  const std::string p(prefix);
  declare_standard(out, join_path(p, "reduce"), channels, f, 1);
  if (cfg.skip_projection) declare_standard(out, join_path(p, "skip"), f, f, 1);
  declare_conv(out, join_path(p, "stride"), kind, f, f, cfg.stride_kernel, rank_ratio);
  for (int j = 0; j < cfg.group_convs; ++j) {
    declare_conv(out, join_path(p, "group." + std::to_string(j)), kind, f, f, 3, rank_ratio);
  }
  declare_standard(out, join_path(p, "restore"), f, channels, 1);
}

void declare_cca(LeafList& out, std::string_view prefix, int channels, int reduction) {
  const int hidden = cca_hidden(channels, reduction);
  declare_standard(out, join_path(prefix, "down"), channels, hidden, 1);
  declare_standard(out, join_path(prefix, "up"), hidden, channels, 1);
}

void declare_channel_weights(LeafList& out, std::string_view prefix, int channels) {
  out.push_back({std::string(prefix), Shape{1, channels, 1, 1}, LeafRole::ChannelWeight, 0});
}

void declare_esdb(LeafList& out, std::string_view prefix, const EsdbConfig& cfg) {
  const std::string p(prefix);
  const int c = cfg.channels;
  const int cd = cfg.distilled;
  if (c < 1 || cd < 1) throw ConfigError("esdb: channel counts must be >= 1");
  for (int i = 0; i < 3; ++i) {
    declare_standard(out, join_path(p, "distill." + std::to_string(i)), c, cd, 1);
    declare_conv(out, join_path(p, "refine." + std::to_string(i)), cfg.conv_kind, c, c, 3, cfg.rank_ratio);
  }
  declare_conv(out, join_path(p, "distill_last"), cfg.conv_kind, c, cd, 3, cfg.rank_ratio);
  declare_standard(out, join_path(p, "condense"), 4 * cd, c, 1);
  if (uses_esa(cfg.attention)) declare_esa(out, join_path(p, "esa"), c, cfg.conv_kind, cfg.esa, cfg.rank_ratio);
  if (uses_cca(cfg.attention)) declare_cca(out, join_path(p, "cca"), c, cfg.cca_reduction);
  if (cfg.attention == AttentionMode::EsaChannelWeights) declare_channel_weights(out, join_path(p, "channel_weights"), c);
}

// ---- forward --------------------------------------------------------------

template <typename T>
Var<T> standard_conv(const Scope<T>& s, const Var<T>& x, int stride, int pad) {
  const Var<T>& w = s("weight");
  const int k = w.shape().h;
  return ad::conv2d(x, w, std::optional<Var<T>>(s("bias")), ConvGeometry::strided(k, stride, resolve_pad(pad, k)));
}

template <typename T>
Var<T> bsconv_u(const Scope<T>& s, const Var<T>& x, int stride, int pad) {
  const Var<T> mid = ad::conv2d(x, s("pw.weight"), std::optional<Var<T>>(), ConvGeometry::strided(1, 1, 0));
  const Var<T>& dw = s("dw.weight");
  const int k = dw.shape().h;
  return ad::conv2d(mid, dw, std::optional<Var<T>>(s("dw.bias")),
                    ConvGeometry::strided(k, stride, resolve_pad(pad, k), dw.shape().n));
}

template <typename T>
Var<T> dsconv(const Scope<T>& s, const Var<T>& x, int stride, int pad) {
  const Var<T>& dw = s("dw.weight");
  const int k = dw.shape().h;
  const Var<T> mid = ad::conv2d(x, dw, std::optional<Var<T>>(s("dw.bias")),
                                ConvGeometry::strided(k, stride, resolve_pad(pad, k), dw.shape().n));
  return ad::conv2d(mid, s("pw.weight"), std::optional<Var<T>>(), ConvGeometry::strided(1, 1, 0));
}

template <typename T>
Var<T> bsconv_s(const Scope<T>& s, const Var<T>& x, int stride, int pad) {
  const auto pw = ConvGeometry::strided(1, 1, 0);
  const Var<T> a = ad::conv2d(x, s("pw_a.weight"), std::optional<Var<T>>(), pw);
  const Var<T> b = ad::conv2d(a, s("pw_b.weight"), std::optional<Var<T>>(), pw);
  const Var<T>& dw = s("dw.weight");
  const int k = dw.shape().h;
  return ad::conv2d(b, dw, std::optional<Var<T>>(s("dw.bias")),
                    ConvGeometry::strided(k, stride, resolve_pad(pad, k), dw.shape().n));
}

template <typename T>
Var<T> bsconv_s_penalty(const Scope<T>& s) {
  return ad::orthonormal_penalty(s("pw_a.weight"));
}

template <typename T>
Var<T> conv(const Scope<T>& s, const Var<T>& x, ConvKind kind, int stride, int pad) {
  switch (kind) {
    case ConvKind::Standard: return standard_conv(s, x, stride, pad);
    case ConvKind::DSConv: return dsconv(s, x, stride, pad);
    case ConvKind::BSConvU: return bsconv_u(s, x, stride, pad);
    case ConvKind::BSConvS: return bsconv_s(s, x, stride, pad);
  }
  throw ConfigError("conv: unknown kind");
}

template <typename T>
Var<T> bsrb(const Scope<T>& s, const Var<T>& x, ConvKind kind, const ActSpec& act) {
  const Var<T> y = conv(s, x, kind);
  if (y.shape() != x.shape()) {
    throw ShapeError("bsrb: residual needs Cin == Cout, got " + x.shape().str() + " -> " + y.shape().str());
  }
  return ad::activate(ad::add(y, x), act.kind, act.slope);
}

template <typename T>
Var<T> esa(const Scope<T>& s, const Var<T>& x, ConvKind kind, const EsaConfig& cfg, const ActSpec& act) {
  const Shape& in = x.shape();
  const int min_size = esa_min_size(cfg);
  if (in.h < min_size || in.w < min_size) {
    throw ShapeError("esa: spatial size " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                     " below required minimum " + std::to_string(min_size) + "x" + std::to_string(min_size));
  }
  const Var<T> reduced = pointwise(s.sub("reduce"), x);
  const Var<T> strided = conv(s.sub("stride"), reduced, kind, 2, 0);
  Var<T> v = ad::max_pool2d(strided, cfg.pool_kernel, cfg.pool_stride);
  for (int j = 0; j < cfg.group_convs; ++j) {
    v = conv(s.sub("group." + std::to_string(j)), v, kind);
    if (j + 1 < cfg.group_convs) v = ad::activate(v, act.kind, act.slope);
  }
  const Var<T> up = ad::upsample(v, in.h, in.w, Resample::Bilinear);
  const Var<T> skip = cfg.skip_projection ? pointwise(s.sub("skip"), reduced) : reduced;
  const Var<T> mask = ad::sigmoid(pointwise(s.sub("restore"), ad::add(up, skip)));
  return ad::mul(x, mask);
}

template <typename T>
Var<T> cca(const Scope<T>& s, const Var<T>& x) {
  const Var<T> stat = ad::channel_contrast(x);
  const Var<T> hidden = ad::activate(pointwise(s.sub("down"), stat), Activation::ReLU);
  const Var<T> scale = ad::sigmoid(pointwise(s.sub("up"), hidden));
  return ad::mul_channel(x, scale);
}

template <typename T>
Var<T> channel_weights(const Scope<T>& s, const Var<T>& x) {
  const Var<T>& w = s("channel_weights");
  if (w.shape().c != x.shape().c) {
    throw ShapeError("channel_weights: " + std::to_string(w.shape().c) + " weights for " +
                     std::to_string(x.shape().c) + " channels");
  }
  return ad::mul_channel(x, w);
}

template <typename T>
Var<T> esdb_forward(const Scope<T>& s, const Var<T>& x, const EsdbConfig& cfg) {
  try {
    if (x.shape().c != cfg.channels) {
      throw ShapeError("expected " + std::to_string(cfg.channels) + " input channels, got " +
                       std::to_string(x.shape().c));
    }
    const ActSpec& act = cfg.act;
    auto a = [&](const Var<T>& v) { return ad::activate(v, act.kind, act.slope); };
    std::vector<Var<T>> distilled;
    Var<T> coarse = x;
    for (int i = 0; i < 3; ++i) {
      const std::string idx = std::to_string(i);
      distilled.push_back(a(pointwise(s.sub("distill." + idx), coarse)));
      coarse = bsrb(s.sub("refine." + idx), coarse, cfg.conv_kind, act);
    }
    distilled.push_back(a(conv(s.sub("distill_last"), coarse, cfg.conv_kind)));
    Var<T> out = a(pointwise(s.sub("condense"), ad::concat_channels(distilled)));
    if (uses_esa(cfg.attention)) out = esa(s.sub("esa"), out, cfg.conv_kind, cfg.esa, act);
    if (uses_cca(cfg.attention)) out = cca(s.sub("cca"), out);
    if (cfg.attention == AttentionMode::EsaChannelWeights) out = channel_weights(s, out);
    return ad::add(out, x);
  } catch (const ShapeError& e) {
    throw ShapeError(s.prefix() + ": " + e.what());
  }
}

template <typename T>
Var<T> total_orthonormal_penalty(const ad::Leaves<T>& leaves) {
  constexpr std::string_view suffix = ".pw_a.weight";
  Var<T> total = Var<T>::constant(Tensor<T>::scalar(T(0)));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const std::string& p = leaves.paths()[i];
    if (p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
      total = ad::add(total, ad::orthonormal_penalty(leaves.var(i)));
    }
  }
  return total;
}

#define BSRN_INSTANTIATE_BLOCKS(T)                                                                    \
  template Var<T> standard_conv(const Scope<T>&, const Var<T>&, int, int);                            \
  template Var<T> bsconv_u(const Scope<T>&, const Var<T>&, int, int);                                 \
  template Var<T> dsconv(const Scope<T>&, const Var<T>&, int, int);                                   \
  template Var<T> bsconv_s(const Scope<T>&, const Var<T>&, int, int);                                 \
  template Var<T> bsconv_s_penalty(const Scope<T>&);                                                  \
  template Var<T> conv(const Scope<T>&, const Var<T>&, ConvKind, int, int);                           \
  template Var<T> bsrb(const Scope<T>&, const Var<T>&, ConvKind, const ActSpec&);                     \
  template Var<T> esa(const Scope<T>&, const Var<T>&, ConvKind, const EsaConfig&, const ActSpec&);    \
  template Var<T> cca(const Scope<T>&, const Var<T>&);                                                \
  template Var<T> channel_weights(const Scope<T>&, const Var<T>&);                                    \
  template Var<T> esdb_forward(const Scope<T>&, const Var<T>&, const EsdbConfig&);                    \
  template Var<T> total_orthonormal_penalty(const ad::Leaves<T>&);

BSRN_INSTANTIATE_BLOCKS(float)
BSRN_INSTANTIATE_BLOCKS(double)

}  // namespace bsrn::blocks
