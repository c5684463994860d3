// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <unistd.h>

#include "bsrn/imaging.hpp"
#include "bsrn/training.hpp"
#include "support/test_support.hpp"

using namespace bsrn;
using namespace bsrn::train;
using bsrn::testing::Gen;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(int scale = 2) {
  ModelConfig cfg = make_preset("custom", scale);
  cfg.channels = 8;
  cfg.num_blocks = 1;
  cfg.replication = 1;
  return cfg;
}

TrainPair random_pair(Gen& gen, int h, int w, int scale) {
  return {gen.tensor<float>(Shape{1, 3, h, w}, 0, 1), gen.tensor<float>(Shape{1, 3, h * scale, w * scale}, 0, 1)};
}

imaging::Plane to_plane(const Tensor<float>& t, int c) {
  imaging::Plane p(t.shape().w, t.shape().h);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = t.plane(0, c)[i];
  return p;
}

}  // namespace

TEST_CASE("L1 loss") {
  Gen gen(1);
  const auto a = gen.tensor<double>(Shape{2, 3, 5, 4});
  CHECK(l1_loss(a, a) == 0.0);
  Tensor<double> b = a;
  for (auto& v : b.data()) v += 0.375;
  CHECK(l1_loss(a, b) == doctest::Approx(0.375).epsilon(1e-12));
  const auto c = gen.tensor<double>(a.shape());
  double direct = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) direct += std::abs(a[i] - c[i]);
  CHECK(l1_loss(a, c) == doctest::Approx(direct / static_cast<double>(a.numel())).epsilon(1e-12));
  CHECK_THROWS_AS(l1_loss(a, gen.tensor<double>(Shape{2, 3, 4, 5})), ShapeError);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1e-3) == 1e-3);
  CHECK(cosine_lr(100, 100, 1e-3) == 0.0);
  CHECK(cosine_lr(50, 100, 1e-3) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(cosine_lr(25, 100, 2.0) == doctest::Approx(1 + std::cos(std::numbers::pi / 4)).epsilon(1e-12));
  for (int t = 1; t <= 100; ++t) CHECK(cosine_lr(t, 100, 1.0) < cosine_lr(t - 1, 100, 1.0));
  CHECK_THROWS_AS(cosine_lr(101, 100, 1e-3), ConfigError);
  CHECK_THROWS_AS(cosine_lr(-1, 100, 1e-3), ConfigError);
}

TEST_CASE("Adam first step, zero gradients and zero rate") {
  Gen gen(2);
  ParamStore<double> p;
  p.add("w", gen.tensor<double>(Shape{1, 1, 3, 4}));
  const ParamStore<double> start = p;
  ParamStore<double> g;
  Tensor<double> grad(Shape{1, 1, 3, 4});
  for (std::size_t i = 0; i < grad.numel(); ++i) grad[i] = (i % 2 == 0 ? 1 : -1) * (0.01 + static_cast<double>(i));
  g.add("w", grad);

  const TrainConfig cfg;
  auto opt = init_adam(p);
  adam_step(p, opt, g, 0.01, cfg);
  CHECK(opt.step == 1);
  for (std::size_t i = 0; i < grad.numel(); ++i) {
    CHECK(p.at("w")[i] - start.at("w")[i] == doctest::Approx(-0.01 * (grad[i] > 0 ? 1 : -1)).epsilon(1e-6));
  }

  ParamStore<double> q = start;
  auto opt2 = init_adam(q);
  adam_step(q, opt2, q.zeros_like(), 0.01, cfg);
  CHECK(q.at("w").vec() == start.at("w").vec());

  ParamStore<double> r = start;
  auto opt3 = init_adam(r);
  adam_step(r, opt3, g, 0.0, cfg);
  CHECK(r.at("w").vec() == start.at("w").vec());

  ParamStore<double> missing;
  missing.add("other", grad);
  CHECK_THROWS_WITH_AS(adam_step(r, opt3, missing, 0.01, cfg), doctest::Contains("missing gradient for w"), ConfigError);
}

TEST_CASE("Adam on a 1-D quadratic matches the hand-stepped table") {
  // f(x) = (x - 3)^2 from x = 0, lr 0.1, betas (0.9, 0.999), eps 1e-8.
  const double table[5] = {0.09999999983333335, 0.19989729258521102, 0.29961847654925267, 0.3990864689442145,
                           0.4982205437727129};
  ParamStore<double> p;
  p.add("x", Tensor<double>(Shape{1, 1, 1, 1}, 0.0));
  auto opt = init_adam(p);
  for (int t = 0; t < 5; ++t) {
    ParamStore<double> g;
    g.add("x", Tensor<double>(Shape{1, 1, 1, 1}, 2 * (p.at("x")[0] - 3)));
    adam_step(p, opt, g, 0.1, TrainConfig{});
    CHECK(p.at("x")[0] == doctest::Approx(table[t]).epsilon(1e-14));
  }
}

TEST_CASE("dihedral augmentation") {
  Gen gen(3);
  const auto x = gen.tensor<float>(Shape{1, 2, 3, 5});
  CHECK(augment(x, 0).vec() == x.vec());
  CHECK(augment(augment(x, 1), 1).vec() == augment(x, 2).vec());
  CHECK(augment(augment(x, 4), 4).vec() == x.vec());
  CHECK(augment(x, 1).shape() == Shape{1, 2, 5, 3});
  // Counter-clockwise quarter turn: the top-right corner moves to the top-left.
  CHECK(augment(x, 1).at(0, 1, 0, 0) == x.at(0, 1, 0, 4));
  CHECK(augment(x, 4).at(0, 0, 2, 0) == x.at(0, 0, 2, 4));

  // All eight codes are distinct and each has an inverse among them.
  Tensor<float> sq = gen.tensor<float>(Shape{1, 1, 4, 4});
  for (int a = 0; a < 8; ++a) {
    for (int b = a + 1; b < 8; ++b) CHECK(augment(sq, a).vec() != augment(sq, b).vec());
    bool inverted = false;
    for (int b = 0; b < 8; ++b) inverted = inverted || augment(augment(sq, a), b).vec() == sq.vec();
    CHECK(inverted);
  }
  CHECK_THROWS_AS(augment(x, 8), ConfigError);
  CHECK_THROWS_AS(augment(x, -1), ConfigError);

  // Identity model: L1 is invariant under any shared transform.
  const auto a = gen.tensor<float>(Shape{1, 3, 4, 6});
  const auto b = gen.tensor<float>(Shape{1, 3, 4, 6});
  for (int code = 0; code < 8; ++code) {
    CHECK(l1_loss(augment(a, code), augment(b, code)) == doctest::Approx(l1_loss(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("patch sampling keeps LR and HR aligned") {
  Gen gen(4);
  const TrainPair pair = random_pair(gen, 20, 17, 3);
  const PatchPair tl = crop_patch(pair.lr, pair.hr, 3, 6, 0, 0);
  CHECK(tl.lr.at(0, 2, 5, 5) == pair.lr.at(0, 2, 5, 5));
  CHECK(tl.hr.at(0, 1, 17, 0) == pair.hr.at(0, 1, 17, 0));
  CHECK(tl.hr.shape() == Shape{1, 3, 18, 18});

  std::mt19937_64 rng(9);
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 200; ++i) {
    const PatchPair p = sample_patch(pair.lr, pair.hr, 3, 6, rng);
    CHECK(p.hr_y == 3 * p.lr_y);
    CHECK(p.hr_x == 3 * p.lr_x);
    CHECK(p.lr_y + 6 <= 20);
    CHECK(p.lr_x + 6 <= 17);
    CHECK(p.hr.at(0, 0, 4, 5) == pair.hr.at(0, 0, p.hr_y + 4, p.hr_x + 5));
    seen.insert({p.lr_y, p.lr_x});
  }
  CHECK(seen.size() > 50);

  CHECK_THROWS_AS(sample_patch(pair.lr, pair.hr, 3, 18, rng), ShapeError);
  CHECK_THROWS_AS(crop_patch(pair.lr, pair.hr, 2, 4, 0, 0), ShapeError);
  CHECK_THROWS_AS(crop_patch(pair.lr, pair.hr, 3, 6, 15, 0), ShapeError);
}

TEST_CASE("HR crop of an upscaled image equals the upscaled LR crop away from crop borders") {
  Gen gen(5);
  const int scale = 2;
  const auto lr = gen.tensor<float>(Shape{1, 3, 20, 20}, 0, 1);
  Tensor<float> hr(Shape{1, 3, 40, 40});
  for (int c = 0; c < 3; ++c) {
    const imaging::Plane up = imaging::bicubic_resize(to_plane(lr, c), 40, 40, false);
    for (std::size_t i = 0; i < up.data.size(); ++i) hr.plane(0, c)[i] = static_cast<float>(up.data[i]);
  }
  const PatchPair p = crop_patch(lr, hr, scale, 10, 5, 7);
  const int margin = 4;
  double worst = 0;
  for (int c = 0; c < 3; ++c) {
    const imaging::Plane up = imaging::bicubic_resize(to_plane(p.lr, c), 20, 20, false);
    for (int y = margin; y < 20 - margin; ++y)
      for (int x = margin; x < 20 - margin; ++x) worst = std::max(worst, std::abs(up.at(y, x) - p.hr.at(0, c, y, x)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("training is deterministic and logs the schedule") {
  Gen gen(6);
  const std::vector<TrainPair> data = {random_pair(gen, 16, 16, 2), random_pair(gen, 16, 16, 2)};
  TrainConfig cfg;
  cfg.total_iters = 6;
  cfg.patch = 15;
  cfg.batch = 2;
  cfg.seed = 11;
  const TrainResult a = train_loop(build(tiny(), 3), data, cfg);
  const TrainResult b = train_loop(build(tiny(), 3), data, cfg);
  REQUIRE(a.trace.size() == 6);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].loss == b.trace[i].loss);
    CHECK(a.trace[i].iter == static_cast<int>(i));
    CHECK(a.trace[i].lr == cosine_lr(static_cast<int>(i), 6, cfg.lr0));
  }
  for (std::size_t i = 0; i < a.state.params.size(); ++i) CHECK(a.state.params.value(i).vec() == b.state.params.value(i).vec());

  cfg.seed = 12;
  const TrainResult c = train_loop(build(tiny(), 3), data, cfg);
  CHECK(c.trace[1].loss != a.trace[1].loss);

  std::ostringstream csv;
  write_trace_csv(a.trace, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("iter,lr,loss\n0,0.001,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
}

TEST_CASE("training reduces the loss on a single image") {
  Gen gen(7);
  const std::vector<TrainPair> data = {random_pair(gen, 15, 15, 2)};
  TrainConfig cfg;
  cfg.total_iters = 60;
  cfg.patch = 0;
  cfg.augment = false;
  cfg.lr0 = 5e-3;
  const TrainResult r = train_loop(build(tiny(), 0), data, cfg);
  CHECK(r.trace.back().loss < 0.75 * r.trace.front().loss);
}

TEST_CASE("orthonormal penalty enters only when weighted") {
  ModelConfig cfg = tiny();
  cfg.conv_kind = blocks::ConvKind::BSConvS;
  Gen gen(8);
  const std::vector<TrainPair> data = {random_pair(gen, 15, 15, 2)};
  TrainConfig tc;
  tc.total_iters = 3;
  tc.patch = 0;
  const TrainResult plain = train_loop(build(cfg, 0), data, tc);
  tc.ortho_weight = 0.1;
  const TrainResult weighted = train_loop(build(cfg, 0), data, tc);
  CHECK(plain.trace[0].loss == weighted.trace[0].loss);
  CHECK(plain.state.params.at("head.pw_a.weight").vec() != weighted.state.params.at("head.pw_a.weight").vec());
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  Gen gen(9);
  std::vector<TrainPair> data = {random_pair(gen, 15, 15, 2)};
  data[0].lr[7] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.total_iters = 2;
  cfg.patch = 0;
  try {
    (void)train_loop(build(tiny(), 0), data, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("first non-finite gradient: head.") != std::string::npos);
  }
}

TEST_CASE("checkpoints are written on schedule") {
  Gen gen(10);
  const std::vector<TrainPair> data = {random_pair(gen, 15, 15, 2)};
  TrainConfig cfg;
  cfg.total_iters = 4;
  cfg.patch = 0;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = fs::temp_directory_path() / ("bsrn_test_training_" + std::to_string(::getpid()));
  fs::remove_all(cfg.checkpoint_dir);
  const TrainResult r = train_loop(build(tiny(), 0), data, cfg);
  const ModelState back = load_checkpoint(cfg.checkpoint_dir);
  for (std::size_t i = 0; i < back.params.size(); ++i) CHECK(back.params.value(i).vec() == r.state.params.value(i).vec());
  fs::remove_all(cfg.checkpoint_dir);

  TrainConfig bad = cfg;
  bad.checkpoint_dir.clear();
  bad.total_iters = 0;
  CHECK_THROWS_AS(train_loop(build(tiny(), 0), data, bad), ConfigError);
  CHECK_THROWS_AS(train_loop(build(tiny(), 0), {}, cfg), ConfigError);
  std::vector<TrainPair> wrong = {random_pair(gen, 15, 15, 3)};
  CHECK_THROWS_AS(train_loop(build(tiny(), 0), wrong, cfg), ShapeError);
}
