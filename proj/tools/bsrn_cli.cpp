// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// bsrn: summary, sr, eval, train-toy, bench, calibrate.
// Exit codes: 0 success, 1 usage error, 2 runtime error. Errors are a single
// JSON line on stderr.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "bsrn/complexity.hpp"
#include "bsrn/dataio.hpp"
#include "bsrn/imaging.hpp"
#include "bsrn/model.hpp"
#include "bsrn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsrn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

// "AxB" -> (A, B).
std::pair<int, int> parse_pair(const std::string& s, const char* flag) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const int a = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const std::string rest = s.substr(x + 1);
    const int b = std::stoi(rest, &used);
    if (used != rest.size() || a < 1 || b < 1) throw std::invalid_argument(s);
    return {a, b};
  } catch (const std::exception&) {
    throw UsageError(std::string(flag) + " expects AxB with positive integers, got '" + s + "'");
  }
}

struct ModelOptions {
  std::string preset = "bsrn";
  int scale = 4;
  std::optional<int> channels;
  std::optional<int> blocks;
  std::optional<int> replication;
  std::optional<int> distilled;
  std::optional<std::string> conv_kind;
  std::optional<std::string> refine_kind;
  std::optional<std::string> attention;
  std::optional<std::string> activation;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "bsrn | bsrn-s | bsrn-1 | bsrn-2 | custom")->capture_default_str();
    cmd->add_option("--scale", scale, "Upscaling factor (2, 3 or 4)")->capture_default_str();
    cmd->add_option("--channels", channels, "Override feature channels");
    cmd->add_option("--blocks", blocks, "Override ESDB count");
    cmd->add_option("--replication", replication, "Override input replication n");
    cmd->add_option("--distilled", distilled, "Override distilled channels");
    cmd->add_option("--conv-kind", conv_kind, "standard | dsconv | bsconv_u | bsconv_s");
    cmd->add_option("--refine-kind", refine_kind, "Kind of the post-fusion conv");
    cmd->add_option("--attention", attention, "esa+cca | esa | cca | esa+cw | none");
    cmd->add_option("--activation", activation, "gelu | relu | lrelu | hswish");
  }

  [[nodiscard]] ModelConfig config() const {
    ModelConfig c = make_preset(preset, scale);
    if (channels) c.channels = *channels;
    if (blocks) c.num_blocks = *blocks;
    if (replication) c.replication = *replication;
    if (distilled) c.distilled = *distilled;
    if (conv_kind) c.conv_kind = blocks::parse_conv_kind(*conv_kind);
    if (refine_kind) c.refine_kind = blocks::parse_conv_kind(*refine_kind);
    if (attention) c.attention = blocks::parse_attention(*attention);
    if (activation) c.activation = blocks::parse_activation(*activation);
    c.validate();
    return c;
  }
};

// ---- summary --------------------------------------------------------------

struct SummaryCmd {
  ModelOptions model;
  std::string gt = "1280x720";
  std::string rounding = "strict";
  bool json_only = false;
  bool detailed = false;
  std::string json_out;

  int run() const {
    const ModelConfig cfg = model.config();
    const auto [w, h] = parse_pair(gt, "--gt");
    complexity::Rounding mode;
    if (rounding == "strict") {
      mode = complexity::Rounding::Strict;
    } else if (rounding == "floor") {
      mode = complexity::Rounding::Floor;
    } else {
      throw UsageError("--rounding must be strict or floor");
    }
    const auto r = complexity::report(cfg, h, w, mode);
    const json j = complexity::to_json(r, detailed);
    if (json_only) {
      std::cout << j.dump(2) << std::endl;
    } else {
      std::cout << complexity::render_table(r, detailed);
    }
    if (!json_out.empty()) dataio::write_atomic(json_out, j.dump(2) + "\n");
    return 0;
  }
};

// ---- sr -------------------------------------------------------------------

struct SrCmd {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::optional<int> scale;

  int run() const {
    const ModelState state = load_checkpoint(checkpoint);
    if (scale && *scale != state.config.scale) {
      throw ConfigError("--scale " + std::to_string(*scale) + " does not match checkpoint scale " +
                        std::to_string(state.config.scale));
    }
    const imaging::PlanarImage lr = dataio::load_png(input);
    const imaging::PlanarImage sr = imaging::from_tensor(forward(state, imaging::to_tensor(lr)));
    fs::path out = output;
    if (out.empty()) {
      const fs::path in(input);
      out = in.parent_path() / (in.stem().string() + "_x" + std::to_string(state.config.scale) + ".png");
    }
    dataio::save_png(sr, out);
    std::cout << json{{"output", out.string()}, {"width", sr.width}, {"height", sr.height}}.dump() << std::endl;
    return 0;
  }
};

// ---- eval -----------------------------------------------------------------

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct EvalCmd {
  std::string checkpoint;
  std::string method;
  std::string sr_dir;
  std::string dataset;
  int scale = 4;
  std::optional<int> shave;
  bool json_only = false;
  std::string json_out;

  int run() const {
    const int chosen = int(!checkpoint.empty()) + int(!method.empty()) + int(!sr_dir.empty());
    if (chosen != 1) throw UsageError("eval needs exactly one of --checkpoint, --method, --sr-dir");
    if (!method.empty() && method != "bicubic") throw UsageError("--method supports only 'bicubic'");
    std::optional<ModelState> state;
    if (!checkpoint.empty()) {
      state = load_checkpoint(checkpoint);
      if (state->config.scale != scale) {
        throw ConfigError("checkpoint scale " + std::to_string(state->config.scale) + " differs from --scale " +
                          std::to_string(scale));
      }
    }
    const int border = shave.value_or(scale);
    const auto pairs = dataio::ingest_dataset(dataset, scale);

    std::vector<double> psnrs(pairs.size());
    std::vector<double> ssims(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      const auto& p = pairs[i];
      imaging::PlanarImage sr;
      if (state) {
        sr = imaging::from_tensor(forward(*state, imaging::to_tensor(p.lr)));
      } else if (!method.empty()) {
        sr = imaging::bicubic_resize(p.lr, p.hr.height, p.hr.width, true);
      } else {
        sr = dataio::load_png(fs::path(sr_dir) / (p.stem + ".png"));
        if (sr.width != p.hr.width || sr.height != p.hr.height) sr = imaging::center_crop_to_multiple(sr, scale);
      }
      psnrs[i] = imaging::psnr_y(sr, p.hr, border);
      ssims[i] = imaging::ssim_y(sr, p.hr, border);
    });

    json images = json::array();
    double mp = 0;
    double ms = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      images.push_back({{"name", pairs[i].stem}, {"psnr_y", psnrs[i]}, {"ssim_y", ssims[i]}});
      mp += psnrs[i];
      ms += ssims[i];
    }
    mp /= static_cast<double>(pairs.size());
    ms /= static_cast<double>(pairs.size());
    const std::string source = state ? "checkpoint" : (!method.empty() ? method : "sr-dir");
    const json j{{"dataset", dataset}, {"scale", scale},        {"shave", border},
                 {"source", source},   {"images", images},      {"mean_psnr_y", mp},
                 {"mean_ssim_y", ms},  {"psnr_cap", imaging::kPsnrCap}};
    if (json_only) {
      std::cout << j.dump(2) << std::endl;
    } else {
      char buf[160];
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%-24s PSNR %8.4f dB  SSIM %.4f\n", pairs[i].stem.c_str(), psnrs[i], ssims[i]);
        std::cout << buf;
      }
      std::snprintf(buf, sizeof buf, "%-24s PSNR %8.4f dB  SSIM %.4f\n", "mean", mp, ms);
      std::cout << buf;
    }
    if (!json_out.empty()) dataio::write_atomic(json_out, j.dump(2) + "\n");
    return 0;
  }
};

// ---- train-toy ------------------------------------------------------------

struct TrainCmd {
  ModelOptions model;
  std::string data;
  std::string out = "checkpoint";
  std::string loss_csv;
  int iters = 200;
  std::uint64_t seed = 0;
  int patch = 48;
  int batch = 1;
  double lr = 1e-3;
  bool no_augment = false;
  double ortho_weight = 0;
  int log_every = 10;
  int checkpoint_every = 0;
  bool quiet = false;

  int run() const {
    const ModelConfig cfg = model.config();
    std::vector<train::TrainPair> pairs;
    const fs::path root(data);
    if (fs::is_directory(root / "HR")) {
      for (const auto& p : dataio::ingest_dataset(root, cfg.scale)) {
        pairs.push_back({imaging::to_tensor(p.lr), imaging::to_tensor(p.hr)});
      }
    } else {
      for (const auto& [stem, img] : dataio::load_hr_folder(root)) {
        const auto hr = imaging::center_crop_to_multiple(img, cfg.scale);
        const auto lr = imaging::bicubic_resize(hr, hr.height / cfg.scale, hr.width / cfg.scale, true);
        pairs.push_back({imaging::to_tensor(lr), imaging::to_tensor(hr)});
      }
    }
    train::TrainConfig tc;
    tc.total_iters = iters;
    tc.seed = seed;
    tc.patch = patch;
    tc.batch = batch;
    tc.lr0 = lr;
    tc.augment = !no_augment;
    tc.ortho_weight = ortho_weight;
    tc.log_every = log_every;
    tc.checkpoint_every = checkpoint_every;
    tc.checkpoint_dir = out;
    const auto result = train::train_loop(build(cfg, seed), pairs, tc, quiet ? nullptr : &std::cerr);
    if (!loss_csv.empty()) {
      std::ostringstream csv;
      train::write_trace_csv(result.trace, csv);
      dataio::write_atomic(loss_csv, csv.str());
    }
    std::cout << json{{"checkpoint", out},
                      {"iterations", iters},
                      {"final_loss", result.trace.back().loss},
                      {"loss_csv", loss_csv}}
                     .dump()
              << std::endl;
    return 0;
  }
};

// ---- bench ----------------------------------------------------------------

struct BenchCmd {
  ModelOptions model;
  std::string size = "64x64";
  int repeats = 5;
  int warmup = 1;
  std::uint64_t seed = 0;
  bool json_only = false;

  int run() const {
    if (repeats < 1) throw UsageError("--repeats must be >= 1");
    const ModelConfig cfg = model.config();
    const auto [h, w] = parse_pair(size, "--size");
    const ModelState state = build(cfg, seed);
    Tensor<float> x(Shape{1, 3, h, w});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.f, 1.f);
    for (auto& v : x.data()) v = dist(rng);
    for (int i = 0; i < warmup; ++i) (void)forward(state, x);
    std::vector<double> ms;
    for (int i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)forward(state, x);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
      const double pos = q * static_cast<double>(sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = static_cast<std::size_t>(std::ceil(pos));
      return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
    };
    double mean = 0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(ms.size());
    const json j{{"config", config_to_json(cfg)}, {"height", h},        {"width", w},
                 {"repeats", repeats},            {"median_ms", quantile(0.5)}, {"p90_ms", quantile(0.9)},
                 {"mean_ms", mean},               {"samples_ms", ms}};
    if (json_only) {
      std::cout << j.dump(2) << std::endl;
    } else {
      std::printf("%s x%d on %dx%d: median %.2f ms, p90 %.2f ms, mean %.2f ms over %d runs\n", cfg.preset.c_str(),
                  cfg.scale, h, w, quantile(0.5), quantile(0.9), mean, repeats);
    }
    return 0;
  }
};

// ---- calibrate ------------------------------------------------------------

struct CalibrateCmd {
  ModelOptions model;
  double target_params = 352000;
  std::optional<double> target_macs;
  double params_tol = 0.03;
  double macs_tol = 0.05;
  std::string gt = "1280x720";
  bool json_only = false;

  int run() const {
    const ModelConfig base = model.config();
    const auto [gw, gh] = parse_pair(gt, "--gt");
    json hits = json::array();
    const int c = base.channels;
    for (int cd : {c / 2, c / 4}) {
      for (int reduction : {4, 6}) {
        for (int n = 1; n <= 4; ++n) {
          for (int groups : {1, 3}) {
            for (bool skip : {false, true}) {
              ModelConfig cfg = base;
              cfg.distilled = cd;
              cfg.esa.reduction = reduction;
              cfg.replication = n;
              cfg.esa.group_convs = groups;
              cfg.esa.skip_projection = skip;
              if (cd < 1 || c / reduction < 1) continue;
              const auto r = complexity::report(cfg, gh, gw, complexity::Rounding::Floor);
              const double perr = (static_cast<double>(r.params) - target_params) / target_params;
              std::optional<double> merr;
              if (target_macs) merr = (static_cast<double>(r.multi_adds) - *target_macs) / *target_macs;
              if (std::abs(perr) > params_tol || (merr && std::abs(*merr) > macs_tol)) continue;
              json hit{{"distilled", cd},          {"esa_reduction", reduction}, {"replication", n},
                       {"esa_group_convs", groups}, {"esa_skip_projection", skip}, {"params", r.params},
                       {"multi_adds", r.multi_adds}, {"params_rel_error", perr}};
              if (merr) hit["multi_adds_rel_error"] = *merr;
              hits.push_back(hit);
            }
          }
        }
      }
    }
    std::sort(hits.begin(), hits.end(), [](const json& a, const json& b) {
      return std::abs(a["params_rel_error"].get<double>()) < std::abs(b["params_rel_error"].get<double>());
    });
    const json j{{"preset", base.preset},
                 {"scale", base.scale},
                 {"target_params", target_params},
                 {"target_multi_adds", target_macs ? json(*target_macs) : json(nullptr)},
                 {"params_tolerance", params_tol},
                 {"multi_adds_tolerance", macs_tol},
                 {"matches", hits}};
    if (json_only) {
      std::cout << j.dump(2) << std::endl;
      return 0;
    }
    std::printf("%zu configuration(s) within tolerance of %.0f params", hits.size(), target_params);
    if (target_macs) std::printf(" and %.3g multi-adds", *target_macs);
    std::printf("\n%4s %6s %3s %6s %5s %10s %14s %9s\n", "Cd", "C/Cf", "n", "groups", "skip", "params", "multi_adds",
                "perr%");
    for (const auto& h : hits) {
      std::printf("%4d %6d %3d %6d %5s %10llu %14llu %+9.3f\n", h["distilled"].get<int>(),
                  h["esa_reduction"].get<int>(), h["replication"].get<int>(), h["esa_group_convs"].get<int>(),
                  h["esa_skip_projection"].get<bool>() ? "yes" : "no", h["params"].get<unsigned long long>(),
                  h["multi_adds"].get<unsigned long long>(), 100 * h["params_rel_error"].get<double>());
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BSRN super-resolution toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  SummaryCmd summary;
  auto* s = app.add_subcommand("summary", "Parameter and Multi-Adds report");
  summary.model.attach(s);
  s->add_option("--gt", summary.gt, "GT resolution WxH")->capture_default_str();
  s->add_option("--rounding", summary.rounding, "strict | floor when GT is not divisible by scale")
      ->capture_default_str();
  s->add_flag("--json", summary.json_only, "Print JSON instead of the table");
  s->add_flag("--detailed", summary.detailed, "Per-layer breakdown");
  s->add_option("--json-out", summary.json_out, "Also write the JSON report here");

  SrCmd sr;
  auto* r = app.add_subcommand("sr", "Super-resolve one PNG");
  r->add_option("--checkpoint", sr.checkpoint, "Checkpoint directory")->required();
  r->add_option("--input", sr.input, "Input PNG")->required();
  r->add_option("--output", sr.output, "Output PNG (default <input>_x<r>.png)");
  r->add_option("--scale", sr.scale, "Expected scale; must match the checkpoint");

  EvalCmd eval;
  auto* e = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a dataset");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory");
  e->add_option("--method", eval.method, "Baseline method: bicubic");
  e->add_option("--sr-dir", eval.sr_dir, "Directory of precomputed SR PNGs named like HR");
  e->add_option("--dataset", eval.dataset, "Dataset root with HR/ and optional LR_x<r>/")->required();
  e->add_option("--scale", eval.scale, "Scale factor")->capture_default_str();
  e->add_option("--shave", eval.shave, "Border pixels to drop (default scale)");
  e->add_flag("--json", eval.json_only, "Print JSON");
  e->add_option("--json-out", eval.json_out, "Also write the JSON report here");

  TrainCmd tr;
  auto* t = app.add_subcommand("train-toy", "Desk-scale training");
  tr.model.attach(t);
  t->add_option("--data", tr.data, "Dataset root (HR/) or folder of HR PNGs")->required();
  t->add_option("--iters", tr.iters, "Iterations")->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed for init and sampling")->capture_default_str();
  t->add_option("--out", tr.out, "Checkpoint directory")->capture_default_str();
  t->add_option("--loss-csv", tr.loss_csv, "Loss trace CSV (iter,lr,loss)");
  t->add_option("--patch", tr.patch, "LR patch size; 0 uses whole images")->capture_default_str();
  t->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  t->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  t->add_flag("--no-augment", tr.no_augment, "Disable flips and rotations");
  t->add_option("--ortho-weight", tr.ortho_weight, "BSConvS orthonormal penalty weight (0 = off)");
  t->add_option("--log-every", tr.log_every, "Trace interval")->capture_default_str();
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Save interval (0 = end only)");
  t->add_flag("--quiet", tr.quiet, "No progress on stderr");

  BenchCmd bench;
  auto* b = app.add_subcommand("bench", "Wall-clock forward timing");
  bench.model.attach(b);
  b->add_option("--size", bench.size, "LR input HxW")->capture_default_str();
  b->add_option("--repeats", bench.repeats, "Timed runs")->capture_default_str();
  b->add_option("--warmup", bench.warmup, "Untimed runs")->capture_default_str();
  b->add_option("--seed", bench.seed, "Seed")->capture_default_str();
  b->add_flag("--json", bench.json_only, "Print JSON");

  CalibrateCmd cal;
  auto* c = app.add_subcommand("calibrate", "Sweep under-specified widths against target counts");
  cal.model.attach(c);
  c->add_option("--target-params", cal.target_params, "Target parameter count")->capture_default_str();
  c->add_option("--target-macs", cal.target_macs, "Target Multi-Adds");
  c->add_option("--params-tol", cal.params_tol, "Relative tolerance on params")->capture_default_str();
  c->add_option("--macs-tol", cal.macs_tol, "Relative tolerance on Multi-Adds")->capture_default_str();
  c->add_option("--gt", cal.gt, "GT resolution WxH")->capture_default_str();
  c->add_flag("--json", cal.json_only, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return fail("usage", ex.what(), 1);
  }

  try {
    if (s->parsed()) return summary.run();
    if (r->parsed()) return sr.run();
    if (e->parsed()) return eval.run();
    if (t->parsed()) return tr.run();
    if (b->parsed()) return bench.run();
    if (c->parsed()) return cal.run();
  } catch (const UsageError& ex) {
    return fail("usage", ex.what(), 1);
  } catch (const ConfigError& ex) {
    return fail("config", ex.what(), 2);
  } catch (const ShapeError& ex) {
    return fail("shape", ex.what(), 2);
  } catch (const FormatError& ex) {
    return fail("format", ex.what(), 2);
  } catch (const NumericError& ex) {
    return fail("numeric", ex.what(), 2);
  } catch (const std::exception& ex) {
    return fail("runtime", ex.what(), 2);
  }
  return 0;
}
