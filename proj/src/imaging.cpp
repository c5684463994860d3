// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/imaging.hpp"

#include <algorithm>
#include <cmath>

namespace bsrn::imaging {

namespace {

double cubic(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1) return 1.5 * ax3 - 2.5 * ax2 + 1;
  if (ax <= 2) return -0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2;
  return 0;
}

// 0-based index into [0, n) with mirror extension that repeats the edge sample.
int symmetric(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

void check_same(const Plane& a, const Plane& b, const char* op) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

Plane shave_plane(const Plane& p, int shave, const char* op) {
  if (shave < 0) throw ShapeError(std::string(op) + ": shave must be >= 0");
  const int w = p.width - 2 * shave;
  const int h = p.height - 2 * shave;
  if (w < 1 || h < 1) throw ShapeError(std::string(op) + ": image too small for shave " + std::to_string(shave));
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = p.at(y + shave, x + shave);
  return out;
}

Plane resize_axis(const Plane& in, const Taps& taps, bool vertical) {
  const int out_len = static_cast<int>(taps.rows.size());
  Plane out(vertical ? in.width : out_len, vertical ? out_len : in.height);
  if (vertical) {
    for (int o = 0; o < out_len; ++o)
      for (int x = 0; x < in.width; ++x) {
        double acc = 0;
        for (const auto& [i, wgt] : taps.rows[o]) acc += wgt * in.at(i, x);
        out.at(o, x) = acc;
      }
  } else {
    for (int y = 0; y < in.height; ++y)
      for (int o = 0; o < out_len; ++o) {
        double acc = 0;
        for (const auto& [i, wgt] : taps.rows[o]) acc += wgt * in.at(y, i);
        out.at(y, o) = acc;
      }
  }
  return out;
}

Plane resize_with_scale(const Plane& in, int out_h, int out_w, double sh, double sw, bool antialias) {
  if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: target size must be >= 1");
  if (in.width < 1 || in.height < 1) throw ShapeError("bicubic_resize: empty input");
  const Taps th = bicubic_taps(in.height, out_h, sh, antialias);
  const Taps tw = bicubic_taps(in.width, out_w, sw, antialias);
  // Smaller scale first; ties resize rows first.
  if (sh <= sw) return resize_axis(resize_axis(in, th, true), tw, false);
  return resize_axis(resize_axis(in, tw, false), th, true);
}

}  // namespace

PlanarImage::PlanarImage(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw ShapeError("PlanarImage: size must be >= 1");
  for (auto& p : planes) p.assign(static_cast<std::size_t>(w) * h, 0);
}

std::uint8_t quantize(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

Tensor<float> to_tensor(const PlanarImage& img) {
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (int c = 0; c < 3; ++c) {
    float* dst = t.plane(0, c);
    for (std::size_t i = 0; i < img.planes[c].size(); ++i) dst[i] = static_cast<float>(img.planes[c][i]) / 255.0f;
  }
  return t;
}

PlanarImage from_tensor(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("from_tensor: expected (1,3,H,W), got " + s.str());
  PlanarImage img(s.w, s.h);
  for (int c = 0; c < 3; ++c) {
    const float* src = t.plane(0, c);
    for (std::size_t i = 0; i < s.plane(); ++i) img.planes[c][i] = quantize(static_cast<double>(src[i]) * 255.0);
  }
  return img;
}

Plane channel_plane(const PlanarImage& img, int c) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = img.planes[c][i];
  return p;
}

Plane rgb_to_y(const PlanarImage& img) {
  Plane y(img.width, img.height);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    y.data[i] = 16.0 + (65.481 * img.planes[0][i] + 128.553 * img.planes[1][i] + 24.966 * img.planes[2][i]) / 255.0;
  }
  return y;
}

Taps bicubic_taps(int in_size, int out_size, double scale, bool antialias) {
  const bool stretch = antialias && scale < 1;
  const double kernel_width = stretch ? 4.0 / scale : 4.0;
  const int count = static_cast<int>(std::ceil(kernel_width)) + 2;
  Taps taps;
  taps.rows.resize(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    // 1-based source coordinate of output sample o + 1.
    const double u = (o + 1) / scale + 0.5 * (1 - 1 / scale);
    const int left = static_cast<int>(std::floor(u - kernel_width / 2));
    std::vector<double> weights(static_cast<std::size_t>(count));
    double total = 0;
    for (int p = 0; p < count; ++p) {
      const double d = u - (left + p);
      weights[p] = stretch ? scale * cubic(scale * d) : cubic(d);
      total += weights[p];
    }
    auto& row = taps.rows[o];
    for (int p = 0; p < count; ++p) {
      if (weights[p] == 0) continue;
      const int idx = symmetric(left + p - 1, in_size);
      const double w = weights[p] / total;
      auto it = std::find_if(row.begin(), row.end(), [idx](const auto& e) { return e.first == idx; });
      if (it != row.end()) {
        it->second += w;
      } else {
        row.emplace_back(idx, w);
      }
    }
  }
  return taps;
}

Plane bicubic_resize(const Plane& in, int out_h, int out_w, bool antialias) {
  return resize_with_scale(in, out_h, out_w, static_cast<double>(out_h) / in.height,
                           static_cast<double>(out_w) / in.width, antialias);
}

Plane bicubic_resize(const Plane& in, double scale, bool antialias) {
  if (!(scale > 0)) throw ShapeError("bicubic_resize: scale must be positive");
  const int out_h = static_cast<int>(std::ceil(in.height * scale));
  const int out_w = static_cast<int>(std::ceil(in.width * scale));
  return resize_with_scale(in, out_h, out_w, scale, scale, antialias);
}

namespace {

template <typename F>
PlanarImage resize_channels(const PlanarImage& img, F&& resize) {
  PlanarImage out;
  for (int c = 0; c < 3; ++c) {
    const Plane p = resize(channel_plane(img, c));
    if (c == 0) out = PlanarImage(p.width, p.height);
    for (std::size_t i = 0; i < p.data.size(); ++i) out.planes[c][i] = quantize(p.data[i]);
  }
  return out;
}

}  // namespace

PlanarImage bicubic_resize(const PlanarImage& img, double scale, bool antialias) {
  return resize_channels(img, [&](const Plane& p) { return bicubic_resize(p, scale, antialias); });
}

PlanarImage bicubic_resize(const PlanarImage& img, int out_h, int out_w, bool antialias) {
  return resize_channels(img, [&](const Plane& p) { return bicubic_resize(p, out_h, out_w, antialias); });
}

namespace {

PlanarImage crop(const PlanarImage& img, int x0, int y0, int w, int h) {
  PlanarImage out(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y + y0, x + x0);
  return out;
}

}  // namespace

PlanarImage crop_to_multiple(const PlanarImage& img, int scale) {
  const int w = img.width - img.width % scale;
  const int h = img.height - img.height % scale;
  if (w < 1 || h < 1) throw ShapeError("crop_to_multiple: image smaller than scale");
  return crop(img, 0, 0, w, h);
}

PlanarImage center_crop_to_multiple(const PlanarImage& img, int scale) {
  const int w = img.width - img.width % scale;
  const int h = img.height - img.height % scale;
  if (w < 1 || h < 1) throw ShapeError("center_crop_to_multiple: image smaller than scale");
  return crop(img, (img.width - w) / 2, (img.height - h) / 2, w, h);
}

double psnr(const Plane& a, const Plane& b, int shave) {
  check_same(a, b, "psnr");
  const Plane sa = shave_plane(a, shave, "psnr");
  const Plane sb = shave_plane(b, shave, "psnr");
  double acc = 0;
  for (std::size_t i = 0; i < sa.data.size(); ++i) {
    const double d = sa.data[i] - sb.data[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(sa.data.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ssim(const Plane& a, const Plane& b, int shave) {
  check_same(a, b, "ssim");
  const Plane sa = shave_plane(a, shave, "ssim");
  const Plane sb = shave_plane(b, shave, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (sa.width < kWin || sa.height < kWin) {
    throw ShapeError("ssim: image must be at least 11x11 after shave, got " + std::to_string(sa.width) + "x" +
                     std::to_string(sa.height));
  }
  std::array<double, kWin> g{};
  double gsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  const int oh = sa.height - kWin + 1;
  const int ow = sa.width - kWin + 1;
  double total = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double w = g[i] * g[j];
          const double va = sa.at(y + i, x + j);
          const double vb = sb.at(y + i, x + j);
          mx += w * va;
          my += w * vb;
          sxx += w * va * va;
          syy += w * vb * vb;
          sxy += w * va * vb;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

double psnr_y(const PlanarImage& sr, const PlanarImage& hr, int shave) {
  return psnr(rgb_to_y(sr), rgb_to_y(hr), shave);
}

double ssim_y(const PlanarImage& sr, const PlanarImage& hr, int shave) {
  return ssim(rgb_to_y(sr), rgb_to_y(hr), shave);
}

}  // namespace bsrn::imaging
