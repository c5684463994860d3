// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bsrn/autodiff.hpp"
#include "bsrn/blocks.hpp"
#include "bsrn/gradcheck.hpp"
#include "bsrn/model.hpp"
#include "support/test_support.hpp"

using namespace bsrn;
using bsrn::ad::Var;
using bsrn::testing::Gen;

namespace {

using Store = ParamStore<double>;

/// A draw is checkable when its trace stays clear of kinks and no sampled
/// gradient lies below central-difference resolution.
bool checkable(const ad::FdReport& r) { return r.smooth && r.unresolved == 0; }

/// Regenerates params until a draw is checkable, then reports.
template <typename MakeStore>
ad::FdReport smooth_check(const ad::ScalarFn& f, MakeStore make, std::uint64_t seed,
                          const ad::FdOptions& opts = {}) {
  for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
    Gen gen(seed * 1000 + attempt);
    const Store params = make(gen);
    const auto report = ad::finite_diff_check(f, params, opts);
    if (checkable(report)) return report;
    MESSAGE("draw " << attempt << " rejected: kink margin " << report.kink_margin << ", unresolved "
                    << report.unresolved);
  }
  FAIL("no checkable draw found");
  return {};
}

/// Composite blocks: step 1e-4 with Richardson extrapolation.
ad::FdOptions block_opts() {
  ad::FdOptions o;
  o.richardson = true;
  return o;
}

void expect_close(const ad::FdReport& r, double tol) {
  INFO("worst leaf " << r.worst_path << "[" << r.worst_index << "] analytic " << r.analytic << " numeric "
                     << r.numeric);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("sum of elementwise product has the other factor as gradient") {
  Gen gen(1);
  Store p;
  p.add("w", gen.tensor<double>(Shape{2, 3, 4, 5}));
  const auto x = gen.tensor<double>(Shape{2, 3, 4, 5});
  const ad::Leaves<double> leaves(p, true);
  const auto loss = ad::sum(ad::mul(leaves["w"], Var<double>::constant(x)));
  const auto g = ad::backward(loss, leaves);
  CHECK(g.at("w").vec() == x.vec());
}

TEST_CASE("l1 of identical tensors gives zero gradient") {
  Gen gen(2);
  Store p;
  p.add("a", gen.tensor<double>(Shape{1, 3, 4, 4}));
  const ad::Leaves<double> leaves(p, true);
  const auto loss = ad::l1_loss(leaves["a"], Var<double>::constant(p.at("a")));
  CHECK(loss.value()[0] == 0.0);
  const auto g = ad::backward(loss, leaves);
  for (double v : g.at("a").data()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects a non-scalar output") {
  Store p;
  p.add("a", Tensor<double>(Shape{1, 2, 2, 2}, 1.0));
  const ad::Leaves<double> leaves(p, true);
  CHECK_THROWS_AS(ad::backward(leaves["a"], leaves), ShapeError);
}

TEST_CASE("untouched leaves get zero gradients of their own shape") {
  Store p;
  p.add("used", Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  p.add("unused", Tensor<double>(Shape{1, 3, 1, 1}, 1.0));
  const ad::Leaves<double> leaves(p, true);
  const auto g = ad::backward(ad::sum(leaves["used"]), leaves);
  CHECK(g.at("unused").shape() == Shape{1, 3, 1, 1});
  for (double v : g.at("unused").data()) CHECK(v == 0.0);
  for (double v : g.at("used").data()) CHECK(v == 1.0);
}

TEST_CASE("gradients are linear in the loss and deterministic") {
  Gen gen(3);
  Store p;
  p.add("x", gen.tensor<double>(Shape{1, 2, 6, 6}));
  p.add("w", gen.tensor<double>(Shape{3, 2, 3, 3}));
  const ad::Leaves<double> leaves(p, true);
  auto f = [&](double k) {
    const auto y = ad::activate(ad::conv2d<double>(leaves["x"], leaves["w"], std::nullopt, ConvGeometry::same(3)),
                                Activation::GELU);
    return ad::scale(ad::sum(y), k);
  };
  const auto g1 = ad::backward(f(1.0), leaves);
  const auto g3 = ad::backward(f(3.0), leaves);
  const auto again = ad::backward(f(1.0), leaves);
  for (const auto& path : g1.paths()) {
    CHECK(g1.at(path).vec() == again.at(path).vec());
    for (std::size_t i = 0; i < g1.at(path).numel(); ++i) {
      CHECK(g3.at(path)[i] == doctest::Approx(3 * g1.at(path)[i]).epsilon(1e-12));
    }
  }
  const ad::Trace<double> trace(f(1.0));
  CHECK(ad::backward(trace, leaves).at("w").vec() == ad::backward(trace, leaves).at("w").vec());
}

TEST_CASE("pixel_shuffle gradient is the inverse permutation") {
  Gen gen(4);
  Store p;
  p.add("x", gen.tensor<double>(Shape{1, 8, 2, 3}));
  const auto weights = gen.tensor<double>(Shape{1, 2, 4, 6});
  const ad::Leaves<double> leaves(p, true);
  const auto loss = ad::sum(ad::mul(ad::pixel_shuffle(leaves["x"], 2), Var<double>::constant(weights)));
  CHECK(ad::backward(loss, leaves).at("x").vec() == pixel_unshuffle(weights, 2).vec());
}

TEST_CASE("inference-only graphs keep no history") {
  Store p;
  p.add("a", Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  const ad::Leaves<double> frozen(p, false);
  const auto y = ad::add(frozen["a"], frozen["a"]);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("finite differences: quadratic") {
  Gen gen(5);
  Store p;
  p.add("t", gen.tensor<double>(Shape{1, 2, 3, 3}));
  auto f = [](const ad::Leaves<double>& l) { return ad::sum(ad::mul(l["t"], l["t"])); };
  const auto r = ad::finite_diff_check(f, p);
  expect_close(r, 1e-8);
  const ad::Leaves<double> leaves(p, true);
  const auto g = ad::backward(f(leaves), leaves);
  for (std::size_t i = 0; i < p.at("t").numel(); ++i) CHECK(g.at("t")[i] == 2 * p.at("t")[i]);
}

TEST_CASE("finite differences: conv, gelu, sum") {
  auto f = [](const ad::Leaves<double>& l) {
    return ad::sum(ad::activate(ad::conv2d<double>(l["x"], l["w"], l["b"], ConvGeometry::strided(3, 2, 1)),
                                Activation::GELU));
  };
  auto make = [](Gen& gen) {
    Store p;
    p.add("x", gen.tensor<double>(Shape{2, 3, 7, 6}));
    p.add("w", gen.tensor<double>(Shape{4, 3, 3, 3}));
    p.add("b", gen.tensor<double>(Shape{1, 4, 1, 1}));
    return p;
  };
  expect_close(smooth_check(f, make, 6), 1e-6);
}

TEST_CASE("finite differences: every primitive op") {
  auto f = [](const ad::Leaves<double>& l) {
    const auto x = l["x"];
    const auto pooled = ad::max_pool2d(x, 3, 2);
    const auto up = ad::upsample(pooled, 7, 7, Resample::Bilinear);
    const auto gate = ad::sigmoid(ad::mul_channel(up, ad::channel_contrast(x)));
    const auto mixed = ad::concat_channels<double>({ad::mul(x, gate), ad::sub(x, ad::scale(up, 0.5))});
    const auto act = ad::activate(mixed, Activation::HSwish);
    const auto shuffled = ad::pixel_shuffle(ad::conv2d<double>(act, l["w"], std::nullopt, ConvGeometry::same(1)), 2);
    return ad::add(ad::sum(ad::mul(shuffled, shuffled)), ad::orthonormal_penalty(l["a"]));
  };
  auto make = [](Gen& gen) {
    Store p;
    p.add("x", gen.tensor<double>(Shape{1, 2, 7, 7}));
    p.add("w", gen.tensor<double>(Shape{4, 4, 1, 1}));
    p.add("a", gen.tensor<double>(Shape{2, 3, 1, 1}));
    return p;
  };
  expect_close(smooth_check(f, make, 7), 1e-6);
}

TEST_CASE("finite differences: l1 loss") {
  auto f = [](const ad::Leaves<double>& l) { return ad::l1_loss(l["p"], l["q"]); };
  auto make = [](Gen& gen) {
    Store p;
    p.add("p", gen.tensor<double>(Shape{1, 3, 5, 5}));
    p.add("q", gen.tensor<double>(Shape{1, 3, 5, 5}));
    return p;
  };
  expect_close(smooth_check(f, make, 8), 1e-6);
}

TEST_CASE("finite differences: BSRB for every conv kind") {
  for (auto kind : {blocks::ConvKind::Standard, blocks::ConvKind::DSConv, blocks::ConvKind::BSConvU,
                    blocks::ConvKind::BSConvS}) {
    CAPTURE(blocks::to_string(kind));
    blocks::LeafList leaves;
    blocks::declare_conv(leaves, "rb", kind, 8, 8, 3);
    leaves.push_back({"x", Shape{1, 8, 5, 5}, blocks::LeafRole::ConvWeight, 0});
    auto f = [kind](const ad::Leaves<double>& l) {
      return ad::sum(blocks::bsrb(ad::Scope<double>(l, "rb"), l["x"], kind, blocks::ActSpec{}));
    };
    expect_close(smooth_check(f, [&](Gen& g) { return testing::scaled_store(leaves, g, 1.0, 0.1); }, 9, block_opts()), 1e-5);
  }
}

TEST_CASE("finite differences: ESA at its minimum-plus-one size") {
  blocks::EsaConfig cfg;
  blocks::LeafList leaves;
  blocks::declare_esa(leaves, "esa", 8, blocks::ConvKind::BSConvU, cfg);
  leaves.push_back({"x", Shape{1, 8, 16, 16}, blocks::LeafRole::ConvWeight, 0});
  auto f = [cfg](const ad::Leaves<double>& l) {
    return ad::sum(blocks::esa(ad::Scope<double>(l, "esa"), l["x"], blocks::ConvKind::BSConvU, cfg, {}));
  };
  expect_close(smooth_check(f, [&](Gen& g) { return testing::scaled_store(leaves, g, 1.0, 0.1); }, 10, block_opts()), 1e-5);
}

TEST_CASE("finite differences: CCA") {
  blocks::LeafList leaves;
  blocks::declare_cca(leaves, "cca", 32, 16);
  leaves.push_back({"x", Shape{2, 32, 5, 5}, blocks::LeafRole::ConvWeight, 0});
  auto f = [](const ad::Leaves<double>& l) { return ad::sum(blocks::cca(ad::Scope<double>(l, "cca"), l["x"])); };
  expect_close(smooth_check(f, [&](Gen& g) { return testing::scaled_store(leaves, g, 1.0, 0.1); }, 11, block_opts()), 1e-5);
}

TEST_CASE("finite differences: ESDB without spatial attention at 10x10") {
  blocks::EsdbConfig cfg;
  cfg.channels = 8;
  cfg.distilled = 4;
  cfg.attention = blocks::AttentionMode::CcaOnly;
  cfg.cca_reduction = 4;
  blocks::LeafList leaves;
  blocks::declare_esdb(leaves, "b", cfg);
  leaves.push_back({"x", Shape{1, 8, 10, 10}, blocks::LeafRole::ConvWeight, 0});
  auto f = [cfg](const ad::Leaves<double>& l) {
    return ad::sum(blocks::esdb_forward(ad::Scope<double>(l, "b"), l["x"], cfg));
  };
  expect_close(smooth_check(f, [&](Gen& g) { return testing::scaled_store(leaves, g, 1.0, 0.1); }, 12, block_opts()), 1e-5);
}

TEST_CASE("finite differences: full ESDB at 16x16") {
  blocks::EsdbConfig cfg;
  cfg.channels = 8;
  cfg.distilled = 4;
  blocks::LeafList leaves;
  blocks::declare_esdb(leaves, "b", cfg);
  leaves.push_back({"x", Shape{1, 8, 16, 16}, blocks::LeafRole::ConvWeight, 0});
  auto f = [cfg](const ad::Leaves<double>& l) {
    return ad::sum(blocks::esdb_forward(ad::Scope<double>(l, "b"), l["x"], cfg));
  };
  expect_close(smooth_check(f, [&](Gen& g) { return testing::scaled_store(leaves, g, 1.0, 0.1); }, 13, block_opts()), 1e-5);
}

TEST_CASE("finite differences: tiny end-to-end network with L1 loss") {
  ModelConfig cfg = make_preset("custom", 2);
  cfg.channels = 8;
  cfg.num_blocks = 2;
  const auto schema = leaf_schema(cfg);
  Gen data_gen(99);
  const auto input = data_gen.tensor<double>(Shape{1, 3, 16, 16}, 0, 1);
  Tensor<double> target;
  auto f = [&](const ad::Leaves<double>& l) {
    return ad::l1_loss(forward<double>(cfg, l, Var<double>::constant(input)), Var<double>::constant(target));
  };
  ad::FdOptions opts = block_opts();
  opts.max_elements = 256;
  ad::FdReport report;
  for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
    Gen gen(14000 + attempt);
    const auto params = testing::scaled_store(schema, gen, 0.8);
    // Residuals kept at least 0.05 away from zero so no L1 element sits near its kink.
    const ad::Leaves<double> frozen(params, false);
    target = forward<double>(cfg, frozen, Var<double>::constant(input)).value();
    for (auto& v : target.data()) v += (gen.coin() ? 1 : -1) * gen.uniform(0.05, 0.3);
    report = ad::finite_diff_check(f, params, opts);
    if (checkable(report)) break;
  }
  REQUIRE(checkable(report));
  expect_close(report, 1e-5);
}
