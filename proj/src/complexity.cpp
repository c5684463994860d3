// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/complexity.hpp"

#include <cstdio>
#include <sstream>

namespace bsrn::complexity {

namespace {

using blocks::ConvKind;
using u64 = std::uint64_t;

int axis_out(int size, int k, int s, int p) {
  const int span = size + 2 * p - k;
  return span < 0 ? 0 : span / s + 1;
}

struct Walker {
  std::vector<LayerRow> rows;

  struct Out {
    int h;
    int w;
  };

  Out primitive(const std::string& path, const char* kind, int cin, int cout, int k, int groups, int h, int w,
                int stride, int pad, bool bias) {
    const int ho = axis_out(h, k, stride, pad);
    const int wo = axis_out(w, k, stride, pad);
    LayerRow row{path, kind, 0, 0, 0};
    row.params = static_cast<u64>(k) * k * (cin / groups) * cout + (bias ? cout : 0);
    row.macs = static_cast<u64>(k) * k * (cin / groups) * cout * ho * wo;
    rows.push_back(row);
    return {ho, wo};
  }

  Out pointwise(const std::string& path, int cin, int cout, int h, int w) {
    return primitive(path, "conv1x1", cin, cout, 1, 1, h, w, 1, 0, true);
  }

  Out conv(const std::string& path, ConvKind kind, int cin, int cout, int k, int h, int w, double ratio,
           int stride = 1, int pad = -1) {
    if (pad < 0) pad = k / 2;
    switch (kind) {
      case ConvKind::Standard:
        return primitive(path, "conv", cin, cout, k, 1, h, w, stride, pad, true);
      case ConvKind::BSConvU:
        primitive(path + ".pw", "pointwise", cin, cout, 1, 1, h, w, 1, 0, false);
        return primitive(path + ".dw", "depthwise", cout, cout, k, cout, h, w, stride, pad, true);
      case ConvKind::DSConv: {
        const Out o = primitive(path + ".dw", "depthwise", cin, cin, k, cin, h, w, stride, pad, true);
        return primitive(path + ".pw", "pointwise", cin, cout, 1, 1, o.h, o.w, 1, 0, false);
      }
      case ConvKind::BSConvS: {
        const int r = blocks::bsconv_s_rank(cin, ratio);
        primitive(path + ".pw_a", "pointwise", cin, r, 1, 1, h, w, 1, 0, false);
        primitive(path + ".pw_b", "pointwise", r, cout, 1, 1, h, w, 1, 0, false);
        return primitive(path + ".dw", "depthwise", cout, cout, k, cout, h, w, stride, pad, true);
      }
    }
    throw ConfigError("complexity: unknown conv kind");
  }

  void other(const std::string& path, const char* kind, u64 count, u64 params = 0) {
    rows.push_back({path, kind, params, 0, count});
  }

  void esa(const std::string& p, const ModelConfig& cfg, int h, int w) {
    const blocks::EsaConfig& e = cfg.esa;
    const int c = cfg.channels;
    const int f = c / e.reduction;
    const u64 hw = static_cast<u64>(h) * w;
    pointwise(p + ".reduce", c, f, h, w);
    if (e.skip_projection) pointwise(p + ".skip", f, f, h, w);
    const Out s = conv(p + ".stride", cfg.conv_kind, f, f, e.stride_kernel, h, w, cfg.rank_ratio, 2, 0);
    const int ph = axis_out(s.h, e.pool_kernel, e.pool_stride, 0);
    const int pw = axis_out(s.w, e.pool_kernel, e.pool_stride, 0);
    other(p + ".pool", "max_pool", static_cast<u64>(ph) * pw * f * e.pool_kernel * e.pool_kernel);
    for (int j = 0; j < e.group_convs; ++j) {
      conv(p + ".group." + std::to_string(j), cfg.conv_kind, f, f, 3, ph, pw, cfg.rank_ratio);
    }
    other(p + ".upsample", "bilinear", hw * f * 4);
    pointwise(p + ".restore", f, c, h, w);
    other(p + ".gate", "sigmoid_mul", hw * c * 2);
  }

  void cca(const std::string& p, const ModelConfig& cfg, int h, int w) {
    const int c = cfg.channels;
    const int hidden = blocks::cca_hidden(c, cfg.cca_reduction);
    other(p + ".contrast", "mean_std", static_cast<u64>(h) * w * c * 2);
    pointwise(p + ".down", c, hidden, 1, 1);
    pointwise(p + ".up", hidden, c, 1, 1);
    other(p + ".gate", "sigmoid_mul", static_cast<u64>(h) * w * c + c);
  }

  void esdb(const std::string& p, const ModelConfig& cfg, int h, int w) {
    const int c = cfg.channels;
    const int cd = cfg.distilled_channels();
    for (int i = 0; i < 3; ++i) {
      const std::string idx = std::to_string(i);
      pointwise(p + ".distill." + idx, c, cd, h, w);
      conv(p + ".refine." + idx, cfg.conv_kind, c, c, 3, h, w, cfg.rank_ratio);
    }
    conv(p + ".distill_last", cfg.conv_kind, c, cd, 3, h, w, cfg.rank_ratio);
    pointwise(p + ".condense", 4 * cd, c, h, w);
    if (blocks::uses_esa(cfg.attention)) esa(p + ".esa", cfg, h, w);
    if (blocks::uses_cca(cfg.attention)) cca(p + ".cca", cfg, h, w);
    if (cfg.attention == blocks::AttentionMode::EsaChannelWeights) {
      other(p + ".channel_weights", "channel_scale", static_cast<u64>(h) * w * c, static_cast<u64>(c));
    }
    other(p + ".residual", "add", static_cast<u64>(h) * w * c * 4);
  }

  void model(const ModelConfig& cfg, int h, int w) {
    const int c = cfg.channels;
    conv("head", cfg.conv_kind, 3 * cfg.replication, c, 3, h, w, cfg.rank_ratio);
    for (int k = 0; k < cfg.num_blocks; ++k) esdb("body." + std::to_string(k), cfg, h, w);
    pointwise("fusion", std::max(cfg.num_blocks, 1) * c, c, h, w);
    conv("refine", cfg.refine_kind, c, c, 3, h, w, cfg.rank_ratio);
    other("skip", "add", static_cast<u64>(h) * w * c);
    primitive("tail", "conv", c, 3 * cfg.scale * cfg.scale, 3, 1, h, w, 1, 1, true);
    other("pixel_shuffle", "permute", 0);
  }
};

}  // namespace

std::pair<int, int> lr_size(int gt_h, int gt_w, int scale, Rounding rounding) {
  if (gt_h < 1 || gt_w < 1) throw ConfigError("complexity: GT size must be positive");
  if (rounding == Rounding::Strict && (gt_h % scale != 0 || gt_w % scale != 0)) {
    throw ConfigError("complexity: GT " + std::to_string(gt_w) + "x" + std::to_string(gt_h) +
                      " is not divisible by scale " + std::to_string(scale));
  }
  const int h = gt_h / scale;
  const int w = gt_w / scale;
  if (h < 1 || w < 1) throw ConfigError("complexity: GT smaller than the scale factor");
  return {h, w};
}

ComplexityReport report(const ModelConfig& cfg, int gt_h, int gt_w, Rounding rounding) {
  cfg.validate();
  ComplexityReport r;
  r.config = cfg;
  r.gt_h = gt_h;
  r.gt_w = gt_w;
  std::tie(r.lr_h, r.lr_w) = lr_size(gt_h, gt_w, cfg.scale, rounding);
  Walker walker;
  walker.model(cfg, r.lr_h, r.lr_w);
  r.rows = std::move(walker.rows);
  for (const auto& row : r.rows) {
    r.params += row.params;
    r.multi_adds += row.macs;
    r.other += row.other;
  }
  return r;
}

std::uint64_t count_params(const ModelConfig& cfg) {
  // Parameters do not depend on resolution; any valid size works.
  return report(cfg, cfg.scale, cfg.scale).params;
}

std::uint64_t count_multi_adds(const ModelConfig& cfg, int gt_h, int gt_w, Rounding rounding) {
  return report(cfg, gt_h, gt_w, rounding).multi_adds;
}

std::string render_table(const ComplexityReport& r, bool detailed) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %10s %14s   (GT %dx%d, LR %dx%d)\n", "Model", "Scale", "Params[K]",
                "Multi-Adds[G]", r.gt_w, r.gt_h, r.lr_w, r.lr_h);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %5s %10.1f %14.2f\n", r.config.preset.c_str(),
                ("x" + std::to_string(r.config.scale)).c_str(), static_cast<double>(r.params) / 1e3,
                static_cast<double>(r.multi_adds) / 1e9);
  out << buf;
  if (detailed) {
    std::snprintf(buf, sizeof buf, "\n%-40s %-14s %10s %16s %16s\n", "layer", "kind", "params", "multi_adds",
                  "other");
    out << buf;
    for (const auto& row : r.rows) {
      std::snprintf(buf, sizeof buf, "%-40s %-14s %10llu %16llu %16llu\n", row.path.c_str(), row.kind.c_str(),
                    static_cast<unsigned long long>(row.params), static_cast<unsigned long long>(row.macs),
                    static_cast<unsigned long long>(row.other));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%-40s %-14s %10llu %16llu %16llu\n", "total", "",
                  static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.multi_adds),
                  static_cast<unsigned long long>(r.other));
    out << buf;
  }
  return out.str();
}

nlohmann::json to_json(const ComplexityReport& r, bool detailed) {
  nlohmann::json j{{"config", config_to_json(r.config)},
                   {"gt", {{"height", r.gt_h}, {"width", r.gt_w}}},
                   {"lr", {{"height", r.lr_h}, {"width", r.lr_w}}},
                   {"params", r.params},
                   {"multi_adds", r.multi_adds},
                   {"other", r.other},
                   {"params_k", static_cast<double>(r.params) / 1e3},
                   {"multi_adds_g", static_cast<double>(r.multi_adds) / 1e9}};
  if (detailed) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"path", row.path},
                      {"kind", row.kind},
                      {"params", row.params},
                      {"multi_adds", row.macs},
                      {"other", row.other}});
    }
    j["layers"] = std::move(rows);
  }
  return j;
}

}  // namespace bsrn::complexity
