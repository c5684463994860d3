// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// 8-bit RGB images, Y-channel conversion, MATLAB-compatible bicubic
// resampling and Y-channel PSNR / SSIM.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bsrn/tensor.hpp"

namespace bsrn::imaging {

/// Single float plane, row-major.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit RGB stored as three planes.
struct PlanarImage {
  int width = 0;
  int height = 0;
  std::array<std::vector<std::uint8_t>, 3> planes;

  PlanarImage() = default;
  PlanarImage(int w, int h);
  std::uint8_t& at(int c, int y, int x) { return planes[c][static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int c, int y, int x) const {
    return planes[c][static_cast<std::size_t>(y) * width + x];
  }
  friend bool operator==(const PlanarImage&, const PlanarImage&) = default;
};

/// Round half up, clamp to [0, 255].
std::uint8_t quantize(double v);

/// (1, 3, H, W) with values v / 255.
Tensor<float> to_tensor(const PlanarImage& img);
/// Inverse of to_tensor with round-half-up quantization; N must be 1.
PlanarImage from_tensor(const Tensor<float>& t);

Plane channel_plane(const PlanarImage& img, int c);

/// Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255, R, G, B in [0, 255].
Plane rgb_to_y(const PlanarImage& img);

/// Cubic kernel a = -0.5; when antialias and downscaling, the kernel is
/// stretched by 1/scale. Symmetric boundary extension.
Plane bicubic_resize(const Plane& in, int out_h, int out_w, bool antialias = true);
/// Output size ceil(size * scale) per axis.
Plane bicubic_resize(const Plane& in, double scale, bool antialias = true);
PlanarImage bicubic_resize(const PlanarImage& img, double scale, bool antialias = true);
PlanarImage bicubic_resize(const PlanarImage& img, int out_h, int out_w, bool antialias = true);

/// Weight matrix rows of the 1-D resampler: out index -> (input index, weight) taps.
struct Taps {
  std::vector<std::vector<std::pair<int, double>>> rows;
};
Taps bicubic_taps(int in_size, int out_size, double scale, bool antialias);

/// Top-left crop to the largest multiple of `scale` in each dimension.
PlanarImage crop_to_multiple(const PlanarImage& img, int scale);
/// Centered crop to the largest multiple of `scale` in each dimension.
PlanarImage center_crop_to_multiple(const PlanarImage& img, int scale);

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(255^2 / MSE) after removing `shave` border pixels; kPsnrCap when MSE is 0.
double psnr(const Plane& a, const Plane& b, int shave);
/// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, L = 255.
double ssim(const Plane& a, const Plane& b, int shave);

double psnr_y(const PlanarImage& sr, const PlanarImage& hr, int shave);
double ssim_y(const PlanarImage& sr, const PlanarImage& hr, int shave);

}  // namespace bsrn::imaging
