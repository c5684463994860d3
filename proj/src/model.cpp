// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace bsrn {

using blocks::ConvKind;
using nlohmann::json;

blocks::EsdbConfig ModelConfig::esdb() const {
  blocks::EsdbConfig e;
  e.channels = channels;
  e.distilled = distilled_channels();
  e.conv_kind = conv_kind;
  e.act = {activation, slope};
  e.attention = attention;
  e.esa = esa;
  e.cca_reduction = cca_reduction;
  e.rank_ratio = rank_ratio;
  return e;
}

int ModelConfig::min_input_size() const {
  return num_blocks > 0 && blocks::uses_esa(attention) ? blocks::esa_min_size(esa) : 1;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (scale < 2 || scale > 4) fail("scale must be 2, 3 or 4, got " + std::to_string(scale));
  if (channels < 1) fail("channels must be >= 1");
  if (num_blocks < 0) fail("num_blocks must be >= 0");
  if (replication < 1) fail("replication must be >= 1");
  if (distilled < 0) fail("distilled must be >= 0");
  if (distilled_channels() < 1) fail("distilled channels resolve to 0");
  if (!(rank_ratio > 0)) fail("rank_ratio must be positive");
  if (!std::isfinite(slope)) fail("slope must be finite");
  if (cca_reduction < 1) fail("cca_reduction must be >= 1");
  if (esa.reduction < 1 || esa.stride_kernel < 1 || esa.pool_kernel < 1 || esa.pool_stride < 1 || esa.group_convs < 0) {
    fail("esa settings out of range");
  }
  if (blocks::uses_esa(attention) && channels / esa.reduction < 1) fail("esa reduction leaves no channels");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return config_to_json(a) == config_to_json(b); }

ModelConfig make_preset(const std::string& name, int scale) {
  ModelConfig cfg;
  cfg.preset = name;
  cfg.scale = scale;
  if (name == "bsrn" || name == "custom") {
  } else if (name == "bsrn-s") {
    cfg.channels = 48;
    cfg.num_blocks = 5;
    cfg.attention = blocks::AttentionMode::EsaChannelWeights;
    cfg.refine_kind = ConvKind::Standard;
  } else if (name == "bsrn-1") {
    cfg.channels = 50;
    cfg.num_blocks = 4;
  } else if (name == "bsrn-2") {
    cfg.num_blocks = 10;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> preset_names() { return {"bsrn", "bsrn-s", "bsrn-1", "bsrn-2", "custom"}; }

json config_to_json(const ModelConfig& c) {
  return json{
      {"preset", c.preset},
      {"scale", c.scale},
      {"channels", c.channels},
      {"num_blocks", c.num_blocks},
      {"replication", c.replication},
      {"distilled", c.distilled_channels()},
      {"conv_kind", blocks::to_string(c.conv_kind)},
      {"refine_kind", blocks::to_string(c.refine_kind)},
      {"activation", blocks::to_string(c.activation)},
      {"slope", c.slope},
      {"attention", blocks::to_string(c.attention)},
      {"esa",
       {{"reduction", c.esa.reduction},
        {"stride_kernel", c.esa.stride_kernel},
        {"pool_kernel", c.esa.pool_kernel},
        {"pool_stride", c.esa.pool_stride},
        {"group_convs", c.esa.group_convs},
        {"skip_projection", c.esa.skip_projection}}},
      {"cca_reduction", c.cca_reduction},
      {"rank_ratio", c.rank_ratio},
  };
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.scale = j.at("scale").get<int>();
    c.channels = j.at("channels").get<int>();
    c.num_blocks = j.at("num_blocks").get<int>();
    c.replication = j.at("replication").get<int>();
    c.distilled = j.at("distilled").get<int>();
    c.conv_kind = blocks::parse_conv_kind(j.at("conv_kind").get<std::string>());
    c.refine_kind = blocks::parse_conv_kind(j.at("refine_kind").get<std::string>());
    c.activation = blocks::parse_activation(j.at("activation").get<std::string>());
    c.slope = j.at("slope").get<double>();
    c.attention = blocks::parse_attention(j.at("attention").get<std::string>());
    const json& e = j.at("esa");
    c.esa.reduction = e.at("reduction").get<int>();
    c.esa.stride_kernel = e.at("stride_kernel").get<int>();
    c.esa.pool_kernel = e.at("pool_kernel").get<int>();
    c.esa.pool_stride = e.at("pool_stride").get<int>();
    c.esa.group_convs = e.at("group_convs").get<int>();
    c.esa.skip_projection = e.at("skip_projection").get<bool>();
    c.cca_reduction = j.at("cca_reduction").get<int>();
    c.rank_ratio = j.at("rank_ratio").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

blocks::LeafList leaf_schema(const ModelConfig& cfg) {
  cfg.validate();
  blocks::LeafList out;
  const int c = cfg.channels;
  blocks::declare_conv(out, "head", cfg.conv_kind, 3 * cfg.replication, c, 3, cfg.rank_ratio);
  const blocks::EsdbConfig e = cfg.esdb();
  for (int k = 0; k < cfg.num_blocks; ++k) blocks::declare_esdb(out, "body." + std::to_string(k), e);
  blocks::declare_standard(out, "fusion", std::max(cfg.num_blocks, 1) * c, c, 1);
  blocks::declare_conv(out, "refine", cfg.refine_kind, c, c, 3, cfg.rank_ratio);
  blocks::declare_standard(out, "tail", c, 3 * cfg.scale * cfg.scale, 3);
  return out;
}

ModelState build(const ModelConfig& cfg, std::uint64_t seed) {
  ModelState state{cfg, {}};
  std::mt19937_64 rng(seed);
  for (const auto& leaf : leaf_schema(cfg)) {
    Tensor<float> t(leaf.shape);
    switch (leaf.role) {
      case blocks::LeafRole::ConvWeight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(leaf.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : t.data()) v = static_cast<float>(dist(rng));
        break;
      }
      case blocks::LeafRole::Bias:
        break;
      case blocks::LeafRole::ChannelWeight:
        t.fill(1.0f);
        break;
    }
    state.params.add(leaf.path, std::move(t));
  }
  return state;
}

template <typename T>
ad::Var<T> forward(const ModelConfig& cfg, const ad::Leaves<T>& leaves, const ad::Var<T>& lr) {
  const Shape& in = lr.shape();
  if (in.c != 3) throw ShapeError("forward: expected 3 input channels, got " + std::to_string(in.c));
  const int min_size = cfg.min_input_size();
  if (in.h < min_size || in.w < min_size) {
    throw ShapeError("forward: input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                     " below required minimum " + std::to_string(min_size) + "x" + std::to_string(min_size));
  }
  const ad::Scope<T> root(leaves, "");
  const blocks::ActSpec act{cfg.activation, cfg.slope};
  const blocks::EsdbConfig e = cfg.esdb();

  const std::vector<ad::Var<T>> copies(static_cast<std::size_t>(cfg.replication), lr);
  const ad::Var<T> f0 = blocks::conv(root.sub("head"), ad::concat_channels(copies), cfg.conv_kind);
  std::vector<ad::Var<T>> features;
  ad::Var<T> h = f0;
  for (int k = 0; k < cfg.num_blocks; ++k) {
    h = blocks::esdb_forward(root.sub("body." + std::to_string(k)), h, e);
    features.push_back(h);
  }
  if (features.empty()) features.push_back(f0);
  const ad::Var<T> fused = ad::activate(
      blocks::standard_conv(root.sub("fusion"), ad::concat_channels(features), 1, 0), act.kind, act.slope);
  const ad::Var<T> refined = blocks::conv(root.sub("refine"), fused, cfg.refine_kind);
  const ad::Var<T> out = blocks::standard_conv(root.sub("tail"), ad::add(refined, f0));
  return ad::pixel_shuffle(out, cfg.scale);
}

template ad::Var<float> forward(const ModelConfig&, const ad::Leaves<float>&, const ad::Var<float>&);
template ad::Var<double> forward(const ModelConfig&, const ad::Leaves<double>&, const ad::Var<double>&);

Tensor<float> forward(const ModelState& state, const Tensor<float>& lr) {
  const ad::Leaves<float> leaves(state.params, false);
  return forward(state.config, leaves, ad::Var<float>::constant(lr)).value();
}

// ---- checkpoint -----------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw FormatError("checkpoint: write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const ModelState& state, const fs::path& dir) {
  json leaves = json::array();
  std::string bin;
  bin.reserve(state.params.element_count() * 4);
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const auto& t = state.params.value(i);
    leaves.push_back({{"path", state.params.path(i)},
                      {"shape", shape_json(t.shape())},
                      {"dtype", "float32"},
                      {"offset", bin.size()}});
    for (float v : t.data()) {
      const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(v));
      bin.append(reinterpret_cast<const char*>(&le), 4);
    }
  }
  const json manifest{{"schema_version", kCheckpointSchemaVersion},
                      {"config", config_to_json(state.config)},
                      {"byte_order", "little"},
                      {"total_bytes", bin.size()},
                      {"leaves", leaves}};

  const fs::path target = fs::absolute(dir);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_file(tmp / "params.bin", bin);
  write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
  if (fs::exists(target)) {
    const fs::path old = target.string() + ".old";
    fs::remove_all(old);
    fs::rename(target, old);
    fs::rename(tmp, target);
    fs::remove_all(old);
  } else {
    fs::rename(tmp, target);
  }
}

namespace {

ModelState load_with(const fs::path& dir, const json& manifest, const ModelConfig& cfg) {
  const std::string bin = read_file(dir / "params.bin");
  const json& table = manifest.at("leaves");
  std::map<std::string, const json*> by_path;
  for (const auto& entry : table) by_path.emplace(entry.at("path").get<std::string>(), &entry);

  ModelState state{cfg, {}};
  const blocks::LeafList schema = leaf_schema(cfg);
  for (const auto& leaf : schema) {
    auto it = by_path.find(leaf.path);
    if (it == by_path.end()) throw FormatError("checkpoint: missing leaf " + leaf.path);
    const json& entry = *it->second;
    if (entry.at("dtype").get<std::string>() != "float32") {
      throw FormatError("checkpoint: unsupported dtype at " + leaf.path);
    }
    if (entry.at("shape") != shape_json(leaf.shape)) {
      throw FormatError("checkpoint: shape mismatch at " + leaf.path + ": stored " + entry.at("shape").dump() +
                        ", expected " + shape_json(leaf.shape).dump());
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = leaf.shape.numel();
    if (offset + count * 4 > bin.size()) throw FormatError("checkpoint: params.bin truncated at " + leaf.path);
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t raw = 0;
      std::memcpy(&raw, bin.data() + offset + i * 4, 4);
      values[i] = std::bit_cast<float>(to_le(raw));
    }
    state.params.add(leaf.path, Tensor<float>(leaf.shape, std::move(values)));
  }
  if (by_path.size() != schema.size()) {
    for (const auto& entry : table) {
      const std::string p = entry.at("path").get<std::string>();
      if (!state.params.contains(p)) throw FormatError("checkpoint: unexpected leaf " + p);
    }
  }
  return state;
}

json read_manifest(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest.json: ") + e.what());
  }
  if (!manifest.contains("schema_version")) throw FormatError("checkpoint: manifest lacks schema_version");
  const int version = manifest.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion) {
    throw FormatError("checkpoint: unsupported schema_version " + std::to_string(version));
  }
  return manifest;
}

}  // namespace

ModelState load_checkpoint(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  try {
    return load_with(dir, manifest, config_from_json(manifest.at("config")));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

ModelState load_checkpoint(const fs::path& dir, const ModelConfig& expected) {
  const json manifest = read_manifest(dir);
  try {
    ModelState state = load_with(dir, manifest, expected);
    json stored = config_to_json(config_from_json(manifest.at("config")));
    json wanted = config_to_json(expected);
    stored.erase("preset");
    wanted.erase("preset");
    if (stored != wanted) {
      throw FormatError("checkpoint: stored config differs from expected config");
    }
    return state;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace bsrn
