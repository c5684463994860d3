// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// Numeric kernels over Tensor. Every op is a pure function of its arguments.
// The *_backward kernels compute vector-Jacobian products and are used by the
// autodiff layer.

#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "bsrn/tensor.hpp"

namespace bsrn {

/// Kernel, stride, zero padding and group count of a 2-D convolution.
struct ConvGeometry {
  int kh = 3;
  int kw = 3;
  int sh = 1;
  int sw = 1;
  int ph = 1;
  int pw = 1;
  int groups = 1;

  /// Stride 1 with pad k/2, which preserves spatial size for odd k.
  static ConvGeometry same(int k, int groups = 1) { return {k, k, 1, 1, k / 2, k / 2, groups}; }
  static ConvGeometry strided(int k, int stride, int pad, int groups = 1) {
    return {k, k, stride, stride, pad, pad, groups};
  }

  /// floor((size + 2p - k) / s) + 1, or 0 when the kernel does not fit.
  [[nodiscard]] int out_h(int h) const { return axis_out(h, kh, sh, ph); }
  [[nodiscard]] int out_w(int w) const { return axis_out(w, kw, sw, pw); }

 private:
  static int axis_out(int size, int k, int s, int p) {
    const int span = size + 2 * p - k;
    return span < 0 ? 0 : span / s + 1;
  }
};

enum class Activation { ReLU, LeakyReLU, HSwish, GELU };

enum class Resample { Nearest, Bilinear };

// ---- convolution ---------------------------------------------------------

/// Grouped cross-correlation. weight is (Cout, Cin/groups, kh, kw); bias, when
/// given, is (1, Cout, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvGeometry& geom);

/// conv2d with groups = C; weight is (C, 1, kh, kw).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                           ConvGeometry geom);

/// 1x1, stride 1, pad 0; weight is (Cout, Cin, 1, 1).
template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias);

/// Output shape of conv2d; throws ShapeError naming the offending dimension.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const Shape* bias,
                          const ConvGeometry& geom);

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const Shape& input_shape, const ConvGeometry& geom);
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& input,
                                 const Shape& weight_shape, const ConvGeometry& geom);
/// Sum over N, H, W per channel, shaped (1, C, 1, 1).
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& t);

/// Counts multiply-accumulates issued by conv2d on this thread while alive.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  [[nodiscard]] std::uint64_t count() const;

 private:
  std::uint64_t* previous_;
  std::uint64_t count_ = 0;
};

// ---- pooling and resampling ---------------------------------------------

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  /// Flat index into the input (n,c) plane of the selected maximum.
  std::vector<std::int32_t> argmax;
  /// Smallest gap between a window's max and its runner-up (0 on ties).
  double min_gap = std::numeric_limits<double>::infinity();
};

/// No padding. Ties route to the first maximum in scan order.
template <typename T>
MaxPoolResult<T> max_pool2d_with_indices(const Tensor<T>& input, int kernel, int stride);
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int kernel, int stride);
template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& grad_out, const std::vector<std::int32_t>& argmax,
                              const Shape& input_shape);

/// Bilinear uses half-pixel centers with edge clamping; nearest uses floor(dst * in / out).
template <typename T>
Tensor<T> upsample(const Tensor<T>& input, int target_h, int target_w, Resample mode);
template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, const Shape& input_shape, Resample mode);

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r);
/// (N, C, H*r, W*r) -> (N, C*r*r, H, W); inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r);

// ---- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.05);
/// Exact form x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// x * clamp(x + 3, 0, 6) / 6.
template <typename T>
Tensor<T> h_swish(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act, double slope = 0.05);
/// Gradient w.r.t. x given upstream gradient, evaluated at pre-activation x.
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Activation act,
                            double slope = 0.05);
/// Smallest distance from any element of x to a kink of act (infinity for smooth ones).
template <typename T>
double activation_kink_margin(const Tensor<T>& x, Activation act);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> neg(const Tensor<T>& a);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

/// x (N,C,H,W) times s (N or 1, C, 1, 1) broadcast over H, W.
template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
/// Channels [begin, begin + count) of t.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int count);

/// Per (n, c): mean plus population standard deviation over H*W, shaped (N, C, 1, 1).
template <typename T>
Tensor<T> channel_contrast(const Tensor<T>& x);
template <typename T>
Tensor<T> channel_contrast_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

template <typename T>
T sum(const Tensor<T>& t);

void check_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace bsrn
