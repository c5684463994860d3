// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bsrn/ops.hpp"
#include "support/test_support.hpp"

using namespace bsrn;
using bsrn::testing::Gen;

namespace {
const Tensor<float>* const kNoBias = nullptr;
}  // namespace

TEST_CASE("tensor rejects bad shapes and data lengths") {
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 0, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.offset(1, 2, 3, 4) == 119);
}

TEST_CASE("conv2d constant field and identity kernel") {
  Tensor<float> x(Shape{1, 1, 3, 3}, 1.f);
  Tensor<float> w(Shape{1, 1, 3, 3}, 1.f);
  const auto y = conv2d(x, w, kNoBias, ConvGeometry::same(3));
  CHECK(y.at(0, 0, 1, 1) == 9.f);
  CHECK(y.at(0, 0, 0, 0) == 4.f);
  CHECK(y.at(0, 0, 2, 2) == 4.f);

  Gen gen(1);
  const auto r = gen.tensor(Shape{2, 1, 5, 6});
  Tensor<float> delta(Shape{1, 1, 3, 3});
  delta.at(0, 0, 1, 1) = 1.f;
  CHECK(conv2d(r, delta, kNoBias, ConvGeometry::same(3)).vec() == r.vec());
}

TEST_CASE("conv2d matches the direct loop oracle on random shapes") {
  Gen gen(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const int groups = gen.pick(std::vector<int>{1, 1, 2});
    const int cin = groups * gen.integer(1, 4);
    const int cout = groups * gen.integer(1, 4);
    const int k = gen.pick(std::vector<int>{1, 3});
    const int s = gen.integer(1, 2);
    const int p = gen.integer(0, k / 2);
    const Shape xs{gen.integer(1, 3), cin, gen.integer(k, 12), gen.integer(k, 12)};
    const auto x = gen.tensor(xs);
    const auto w = gen.tensor(Shape{cout, cin / groups, k, k});
    const auto b = gen.tensor(Shape{1, cout, 1, 1});
    const ConvGeometry g = ConvGeometry::strided(k, s, p, groups);
    const auto y = conv2d(x, w, &b, g);
    const auto ref = testing::naive_conv2d(x, w, &b, g);
    REQUIRE(y.shape() == ref.shape());
    CHECK(testing::norm_rel_error(y, ref) < 1e-5);
  }
}

TEST_CASE("conv2d rejections name the offending dimension") {
  Tensor<float> x(Shape{1, 4, 5, 5});
  Tensor<float> w(Shape{2, 3, 3, 3});
  try {
    (void)conv2d(x, w, kNoBias, ConvGeometry::same(3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("in-channels") != std::string::npos);
  }
  Tensor<float> w2(Shape{2, 4, 3, 3});
  CHECK_THROWS_AS(conv2d(Tensor<float>(Shape{1, 4, 2, 2}), w2, kNoBias, ConvGeometry::strided(3, 1, 0)), ShapeError);
  CHECK_THROWS_AS(conv2d(x, w2, kNoBias, ConvGeometry::same(3, 3)), ShapeError);
}

TEST_CASE("depthwise equals dense conv with block-diagonal weight") {
  Gen gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = gen.integer(1, 6);
    const int s = gen.integer(1, 2);
    const auto x = gen.tensor(Shape{2, c, gen.integer(3, 9), gen.integer(3, 9)});
    const auto w = gen.tensor(Shape{c, 1, 3, 3});
    const auto b = gen.tensor(Shape{1, c, 1, 1});
    Tensor<float> dense(Shape{c, c, 3, 3});
    for (int o = 0; o < c; ++o)
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) dense.at(o, o, u, v) = w.at(o, 0, u, v);
    const auto y = depthwise_conv2d(x, w, &b, ConvGeometry::strided(3, s, 1));
    const auto ref = conv2d(x, dense, &b, ConvGeometry::strided(3, s, 1));
    CHECK(testing::norm_rel_error(y, ref) < 1e-5);
    const auto naive = testing::naive_conv2d(x, w, &b, ConvGeometry::strided(3, s, 1, c));
    CHECK(testing::norm_rel_error(y, naive) < 1e-5);
  }
}

TEST_CASE("depthwise channels are independent") {
  Gen gen(8);
  auto x = gen.tensor(Shape{1, 4, 6, 6});
  const auto w = gen.tensor(Shape{4, 1, 3, 3});
  const auto b = gen.tensor(Shape{1, 4, 1, 1});
  const auto base = depthwise_conv2d(x, w, &b, ConvGeometry::same(3));

  auto zeroed = x;
  std::fill(zeroed.plane(0, 2), zeroed.plane(0, 2) + 36, 0.f);
  const auto z = depthwise_conv2d(zeroed, w, &b, ConvGeometry::same(3));
  for (int i = 0; i < 36; ++i) CHECK(z.plane(0, 2)[i] == b[2]);

  for (int c = 0; c < 4; ++c) {
    auto bumped = x;
    bumped.at(0, c, 3, 3) += 1.f;
    const auto y = depthwise_conv2d(bumped, w, &b, ConvGeometry::same(3));
    for (int oc = 0; oc < 4; ++oc) {
      const bool same = std::equal(y.plane(0, oc), y.plane(0, oc) + 36, base.plane(0, oc));
      CHECK(same == (oc != c));
    }
  }
}

TEST_CASE("pointwise identity, mean and conv2d agreement") {
  Gen gen(9);
  const auto x = gen.tensor(Shape{2, 5, 4, 3});
  Tensor<float> eye(Shape{5, 5, 1, 1});
  for (int i = 0; i < 5; ++i) eye.at(i, i, 0, 0) = 1.f;
  CHECK(pointwise_conv2d(x, eye, kNoBias).vec() == x.vec());

  Tensor<float> avg(Shape{1, 5, 1, 1}, 1.f / 5);
  const auto m = pointwise_conv2d(x, avg, kNoBias);
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 3; ++w) {
      double mean = 0;
      for (int c = 0; c < 5; ++c) mean += x.at(1, c, h, w);
      CHECK(m.at(1, 0, h, w) == doctest::Approx(mean / 5).epsilon(1e-6));
    }

  const auto w = gen.tensor(Shape{7, 5, 1, 1});
  const auto b = gen.tensor(Shape{1, 7, 1, 1});
  CHECK(testing::norm_rel_error(pointwise_conv2d(x, w, &b), conv2d(x, w, &b, ConvGeometry::strided(1, 1, 0))) <
        1e-6);
}

TEST_CASE("max_pool2d cases") {
  Tensor<float> c(Shape{1, 2, 5, 5}, 3.f);
  const auto pooled = max_pool2d(c, 2, 2);
  for (float v : pooled.data()) CHECK(v == 3.f);

  Tensor<float> ramp(Shape{1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i);
  CHECK(max_pool2d(ramp, 2, 2).vec() == std::vector<float>{5, 7, 13, 15});

  Gen gen(10);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = gen.tensor(Shape{gen.integer(1, 2), gen.integer(1, 3), gen.integer(7, 20), gen.integer(7, 20)});
    const auto y = max_pool2d(x, 7, 3);
    const auto ref = testing::naive_max_pool(x, 7, 3);
    REQUIRE(y.shape() == ref.shape());
    CHECK(testing::max_abs_diff(y, ref) == 0.0);
  }
  CHECK_THROWS_AS(max_pool2d(Tensor<float>(Shape{1, 1, 6, 9}), 7, 3), ShapeError);
}

TEST_CASE("max_pool2d routes ties to the first maximum") {
  Tensor<float> x(Shape{1, 1, 2, 2}, 1.f);
  const auto r = max_pool2d_with_indices(x, 2, 2);
  CHECK(r.argmax[0] == 0);
  CHECK(r.min_gap == 0.0);
}

TEST_CASE("upsample constant, identity and hand-derived bilinear weights") {
  Tensor<float> c(Shape{1, 2, 3, 4}, 0.25f);
  for (auto mode : {Resample::Nearest, Resample::Bilinear}) {
    const auto up = upsample(c, 7, 5, mode);
    for (float v : up.data()) CHECK(v == doctest::Approx(0.25f));
  }
  Gen gen(11);
  const auto x = gen.tensor(Shape{1, 3, 5, 6});
  CHECK(testing::max_abs_diff(upsample(x, 5, 6, Resample::Bilinear), x) < 1e-7);

  // Half-pixel centers: output i samples (i + 0.5) / 2 - 0.5.
  const float a = 1.f;
  const float b = 5.f;
  Tensor<float> two(Shape{1, 1, 1, 2}, std::vector<float>{a, b});
  const auto up = upsample(two, 1, 4, Resample::Bilinear);
  CHECK(up[0] == doctest::Approx(a));
  CHECK(up[1] == doctest::Approx(0.75 * a + 0.25 * b));
  CHECK(up[2] == doctest::Approx(0.25 * a + 0.75 * b));
  CHECK(up[3] == doctest::Approx(b));
}

TEST_CASE("pixel_shuffle index formula and inverse") {
  Tensor<float> x(Shape{1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
  const auto y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.vec() == std::vector<float>{1, 2, 3, 4});

  Gen gen(12);
  for (int trial = 0; trial < 25; ++trial) {
    const int r = gen.integer(1, 4);
    const auto t = gen.tensor(Shape{gen.integer(1, 2), r * r * gen.integer(1, 3), gen.integer(1, 5), gen.integer(1, 5)});
    const auto s = pixel_shuffle(t, r);
    if (r == 1) CHECK(s.vec() == t.vec());
    CHECK(pixel_unshuffle(s, r).vec() == t.vec());
    auto a = t.vec();
    auto b = s.vec();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    const Shape& ts = t.shape();
    const int c = gen.integer(0, ts.c / (r * r) - 1);
    const int i = gen.integer(0, r - 1);
    const int j = gen.integer(0, r - 1);
    const int h = gen.integer(0, ts.h - 1);
    const int w = gen.integer(0, ts.w - 1);
    CHECK(s.at(0, c, h * r + i, w * r + j) == t.at(0, c * r * r + i * r + j, h, w));
  }
  CHECK_THROWS_AS(pixel_shuffle(Tensor<float>(Shape{1, 6, 2, 2}), 2), ShapeError);
}

TEST_CASE("activation definitions") {
  auto one = [](float v) { return Tensor<double>(Shape{1, 1, 1, 1}, v); };
  CHECK(gelu(one(0))[0] == 0.0);
  CHECK(relu(one(-1))[0] == 0.0);
  CHECK(sigmoid(one(0))[0] == 0.5);
  CHECK(h_swish(one(-3))[0] == 0.0);
  CHECK(h_swish(one(3))[0] == 3.0);
  CHECK(gelu(one(5))[0] == doctest::Approx(5.0).epsilon(1e-4));
  CHECK(leaky_relu(one(-2))[0] == doctest::Approx(-0.1));
}

TEST_CASE("gelu matches a quadrature Gaussian CDF") {
  // Phi(x) = 0.5 + integral_0^x phi(t) dt, composite Simpson with 2000 panels.
  auto phi_cdf = [](double x) {
    const int n = 2000;
    const double h = x / n;
    double acc = 0;
    for (int i = 0; i <= n; ++i) {
      const double t = i * h;
      const double f = std::exp(-0.5 * t * t) / std::sqrt(2 * std::numbers::pi);
      acc += f * (i == 0 || i == n ? 1 : (i % 2 == 1 ? 4 : 2));
    }
    return 0.5 + acc * h / 3;
  };
  Tensor<double> grid(Shape{1, 1, 1, 81});
  for (int i = 0; i < 81; ++i) grid[i] = -4.0 + 0.1 * i;
  const auto g = gelu(grid);
  for (int i = 0; i < 81; ++i) CHECK(std::abs(g[i] - grid[i] * phi_cdf(grid[i])) < 1e-6);
}

TEST_CASE("activations are monotone where expected and sigmoid stays open") {
  Tensor<double> grid(Shape{1, 1, 1, 2001});
  for (int i = 0; i < 2001; ++i) grid[i] = -10.0 + 0.01 * i;
  for (auto act : {Activation::ReLU, Activation::LeakyReLU, Activation::HSwish, Activation::GELU}) {
    const auto y = activate(grid, act);
    for (int i = 1; i < 2001; ++i) {
      if (act == Activation::HSwish && grid[i - 1] < -1.49) continue;
      if (act == Activation::GELU && grid[i - 1] < -0.755) continue;
      CHECK(y[i] >= y[i - 1]);
    }
  }
  Tensor<float> extreme(Shape{1, 1, 1, 4}, std::vector<float>{-1e4f, -80.f, 80.f, 1e4f});
  const auto sig = sigmoid(extreme);
  for (float v : sig.data()) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("concat, add and mul") {
  Gen gen(13);
  const auto a = gen.tensor(Shape{2, 3, 4, 5});
  const auto b = gen.tensor(Shape{2, 2, 4, 5});
  CHECK(concat_channels<float>({a}).vec() == a.vec());
  const auto ab = concat_channels<float>({a, b});
  CHECK(ab.shape().c == 5);
  CHECK(slice_channels(ab, 0, 3).vec() == a.vec());
  CHECK(slice_channels(ab, 3, 2).vec() == b.vec());
  const auto cancelled = add(a, neg(a));
  for (float v : cancelled.data()) CHECK(v == 0.f);
  CHECK(mul(a, Tensor<float>(a.shape(), 2.f)).vec() == scale(a, 2.f).vec());
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat_channels<float>({a, gen.tensor(Shape{2, 1, 4, 4})}), ShapeError);
}

TEST_CASE("channel_contrast matches a two-pass oracle") {
  Gen gen(14);
  const auto x = gen.tensor<double>(Shape{2, 3, 5, 7});
  const auto s = channel_contrast(x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int i = 0; i < 35; ++i) mean += x.plane(n, c)[i];
      mean /= 35;
      double var = 0;
      for (int i = 0; i < 35; ++i) var += (x.plane(n, c)[i] - mean) * (x.plane(n, c)[i] - mean);
      CHECK(s.at(n, c, 0, 0) == doctest::Approx(mean + std::sqrt(var / 35)).epsilon(1e-12));
    }
  Tensor<float> flat(Shape{1, 1, 3, 3}, 0.7f);
  CHECK(channel_contrast(flat)[0] == doctest::Approx(0.7f));
}

TEST_CASE("mac counter counts conv multiply-accumulates") {
  Tensor<float> x(Shape{1, 64, 180, 320});
  Tensor<float> w(Shape{64, 64, 3, 3});
  MacCounter counter;
  (void)conv2d(x, w, kNoBias, ConvGeometry::same(3));
  CHECK(counter.count() == 2123366400ull);
}

TEST_CASE("conv backward kernels are adjoint to the forward map") {
  // <g, conv(x, w)> = <dx, x> = <dw, w> for the bias-free linear map.
  auto dot = [](const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
  };
  const Tensor<double>* no_bias = nullptr;
  Gen gen(15);
  for (int trial = 0; trial < 300; ++trial) {
    const int groups = gen.pick(std::vector<int>{1, 2, 4});
    const int k = gen.pick(std::vector<int>{1, 3});
    const Shape xs{gen.integer(1, 2), groups * gen.integer(1, 3), gen.integer(k, 14), gen.integer(k, 14)};
    const ConvGeometry g = ConvGeometry::strided(k, gen.integer(1, 3), gen.integer(0, k / 2 + 1), groups);
    const auto x = gen.tensor<double>(xs);
    const auto w = gen.tensor<double>(Shape{groups * gen.integer(1, 3), xs.c / groups, k, k});
    const auto y = conv2d(x, w, no_bias, g);
    const auto go = gen.tensor<double>(y.shape());
    const double lhs = dot(go, y);
    CHECK(dot(conv2d_backward_input(go, w, xs, g), x) == doctest::Approx(lhs).epsilon(1e-10));
    CHECK(dot(conv2d_backward_weight(go, x, w.shape(), g), w) == doctest::Approx(lhs).epsilon(1e-10));
  }
}
