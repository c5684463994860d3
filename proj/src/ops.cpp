// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bsrn {

namespace {

thread_local std::uint64_t* g_mac_sink = nullptr;

std::string dim_msg(const char* op, const char* dim, long got, long want) {
  return std::string(op) + ": " + dim + " is " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

int ceil_div_nonneg(int a, int b) { return a <= 0 ? 0 : (a + b - 1) / b; }

// Output columns [lo, hi) whose input column ox*s + k - p lies inside [0, w).
void tap_range(int w_in, int w_out, int k, int s, int p, int& lo, int& hi) {
  lo = ceil_div_nonneg(p - k, s);
  const int last = w_in - 1 + p - k;
  hi = last < 0 ? 0 : std::min(w_out, last / s + 1);
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& x, auto&& f) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, auto&& f) {
  check_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out(a.shape());
  auto pa = a.data();
  auto pb = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < pa.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  // Keep the open interval even where exp under/overflows.
  return std::clamp(s, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
}

template <typename T>
T gelu_scalar(T x) {
  return x * T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

// ---- convolution ---------------------------------------------------------

Shape conv2d_output_shape(const Shape& in, const Shape& wt, const Shape* bias,
                          const ConvGeometry& g) {
  const char* op = "conv2d";
  if (g.groups < 1) throw ShapeError(dim_msg(op, "groups", g.groups, 1));
  if (g.kh < 1 || g.kw < 1 || g.sh < 1 || g.sw < 1 || g.ph < 0 || g.pw < 0) {
    throw ShapeError("conv2d: kernel and stride must be >= 1 and padding >= 0");
  }
  if (in.c % g.groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(in.c) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  if (wt.n % g.groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(wt.n) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  if (wt.c != in.c / g.groups) {
    throw ShapeError(dim_msg("conv2d", "weight in-channels (dim 1)", wt.c, in.c / g.groups));
  }
  if (wt.h != g.kh) throw ShapeError(dim_msg(op, "weight kernel height (dim 2)", wt.h, g.kh));
  if (wt.w != g.kw) throw ShapeError(dim_msg(op, "weight kernel width (dim 3)", wt.w, g.kw));
  if (bias != nullptr && !(*bias == Shape{1, wt.n, 1, 1})) {
    throw ShapeError("conv2d: bias shape " + bias->str() + ", expected " +
                     Shape{1, wt.n, 1, 1}.str());
  }
  const Shape out{in.n, wt.n, g.out_h(in.h), g.out_w(in.w)};
  if (out.h < 1) {
    throw ShapeError("conv2d: output height non-positive for input height " + std::to_string(in.h));
  }
  if (out.w < 1) {
    throw ShapeError("conv2d: output width non-positive for input width " + std::to_string(in.w));
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvGeometry& g) {
  const Shape& is = input.shape();
  const Shape os = conv2d_output_shape(is, weight.shape(), bias ? &bias->shape() : nullptr, g);
  Tensor<T> out(os);
  const int cin_g = is.c / g.groups;
  const int cout_g = os.c / g.groups;

  for (int n = 0; n < os.n; ++n) {
    for (int oc = 0; oc < os.c; ++oc) {
      T* o = out.plane(n, oc);
      if (bias != nullptr) std::fill(o, o + os.plane(), (*bias)[oc]);
      const int group = oc / cout_g;
      for (int icg = 0; icg < cin_g; ++icg) {
        const T* in = input.plane(n, group * cin_g + icg);
        const T* wk = weight.data().data() + (static_cast<std::size_t>(oc) * cin_g + icg) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            int lo = 0;
            int hi = 0;
            tap_range(is.w, os.w, kx, g.sw, g.pw, lo, hi);
            if (lo >= hi) continue;
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * g.sh + ky - g.ph;
              if (iy < 0 || iy >= is.h) continue;
              T* orow = o + static_cast<std::size_t>(oy) * os.w;
              const T* irow = in + static_cast<std::size_t>(iy) * is.w;
              const int off = kx - g.pw;
              if (g.sw == 1) {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + off];
              } else {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.sw + off];
              }
            }
          }
        }
      }
    }
  }
  if (g_mac_sink != nullptr) {
    *g_mac_sink += static_cast<std::uint64_t>(g.kh) * g.kw * cin_g * os.numel();
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                           ConvGeometry geom) {
  geom.groups = input.shape().c;
  if (weight.shape().n != input.shape().c) {
    throw ShapeError(dim_msg("depthwise_conv2d", "weight channels (dim 0)", weight.shape().n,
                             input.shape().c));
  }
  return conv2d(input, weight, bias, geom);
}

template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias) {
  return conv2d(input, weight, bias, ConvGeometry{1, 1, 1, 1, 0, 0, 1});
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const Shape& is, const ConvGeometry& g) {
  const Shape& os = grad_out.shape();
  Tensor<T> gin(is);
  const int cin_g = is.c / g.groups;
  const int cout_g = os.c / g.groups;
  for (int n = 0; n < os.n; ++n) {
    for (int oc = 0; oc < os.c; ++oc) {
      const T* go = grad_out.plane(n, oc);
      const int group = oc / cout_g;
      for (int icg = 0; icg < cin_g; ++icg) {
        T* gi = gin.plane(n, group * cin_g + icg);
        const T* wk = weight.data().data() + (static_cast<std::size_t>(oc) * cin_g + icg) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            int lo = 0;
            int hi = 0;
            tap_range(is.w, os.w, kx, g.sw, g.pw, lo, hi);
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * g.sh + ky - g.ph;
              if (iy < 0 || iy >= is.h) continue;
              const T* grow = go + static_cast<std::size_t>(oy) * os.w;
              T* irow = gi + static_cast<std::size_t>(iy) * is.w;
              const int off = kx - g.pw;
              for (int ox = lo; ox < hi; ++ox) irow[ox * g.sw + off] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return gin;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& input,
                                 const Shape& ws, const ConvGeometry& g) {
  const Shape& os = grad_out.shape();
  const Shape& is = input.shape();
  Tensor<T> gw(ws);
  const int cin_g = is.c / g.groups;
  const int cout_g = os.c / g.groups;
  for (int oc = 0; oc < os.c; ++oc) {
    const int group = oc / cout_g;
    for (int icg = 0; icg < cin_g; ++icg) {
      T* gk = gw.data().data() + (static_cast<std::size_t>(oc) * cin_g + icg) * g.kh * g.kw;
      for (int ky = 0; ky < g.kh; ++ky) {
        for (int kx = 0; kx < g.kw; ++kx) {
          int lo = 0;
          int hi = 0;
          tap_range(is.w, os.w, kx, g.sw, g.pw, lo, hi);
          T acc = 0;
          for (int n = 0; n < os.n; ++n) {
            const T* go = grad_out.plane(n, oc);
            const T* in = input.plane(n, group * cin_g + icg);
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * g.sh + ky - g.ph;
              if (iy < 0 || iy >= is.h) continue;
              const T* grow = go + static_cast<std::size_t>(oy) * os.w;
              const T* irow = in + static_cast<std::size_t>(iy) * is.w;
              const int off = kx - g.pw;
              T row = 0;
              for (int ox = lo; ox < hi; ++ox) row += grow[ox] * irow[ox * g.sw + off];
              acc += row;
            }
          }
          gk[ky * g.kw + kx] = acc;
        }
      }
    }
  }
  return gw;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& t) {
  const Shape& s = t.shape();
  Tensor<T> out(Shape{1, s.c, 1, 1});
  for (int c = 0; c < s.c; ++c) {
    double acc = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = t.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    out[c] = static_cast<T>(acc);
  }
  return out;
}

MacCounter::MacCounter() : previous_(g_mac_sink) { g_mac_sink = &count_; }

MacCounter::~MacCounter() {
  g_mac_sink = previous_;
  if (previous_ != nullptr) *previous_ += count_;
}

std::uint64_t MacCounter::count() const { return count_; }

// ---- pooling and resampling ---------------------------------------------

template <typename T>
MaxPoolResult<T> max_pool2d_with_indices(const Tensor<T>& input, int kernel, int stride) {
  const Shape& is = input.shape();
  if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: kernel and stride must be >= 1");
  if (is.h < kernel || is.w < kernel) {
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " larger than input " +
                     std::to_string(is.h) + "x" + std::to_string(is.w));
  }
  const Shape os{is.n, is.c, (is.h - kernel) / stride + 1, (is.w - kernel) / stride + 1};
  MaxPoolResult<T> r{Tensor<T>(os), std::vector<std::int32_t>(os.numel()), std::numeric_limits<double>::infinity()};
  std::size_t k = 0;
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < is.c; ++c) {
      const T* in = input.plane(n, c);
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox, ++k) {
          int best = oy * stride * is.w + ox * stride;
          T best_v = in[best];
          T second = -std::numeric_limits<T>::infinity();
          bool first = true;
          for (int dy = 0; dy < kernel; ++dy) {
            for (int dx = 0; dx < kernel; ++dx) {
              const int idx = (oy * stride + dy) * is.w + ox * stride + dx;
              if (first) {
                first = false;
                continue;
              }
              const T v = in[idx];
              if (v > best_v) {
                second = best_v;
                best_v = v;
                best = idx;
              } else if (v > second) {
                second = v;
              }
            }
          }
          r.output[k] = best_v;
          r.argmax[k] = best;
          if (kernel > 1) r.min_gap = std::min(r.min_gap, static_cast<double>(best_v - second));
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int kernel, int stride) {
  return max_pool2d_with_indices(input, kernel, stride).output;
}

template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& grad_out, const std::vector<std::int32_t>& argmax,
                              const Shape& is) {
  const Shape& os = grad_out.shape();
  Tensor<T> gin(is);
  std::size_t k = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      T* gi = gin.plane(n, c);
      for (std::size_t i = 0; i < os.plane(); ++i, ++k) gi[argmax[k]] += grad_out[k];
    }
  }
  return gin;
}

namespace {

struct LinearTap {
  int i0;
  int i1;
  double frac;
};

std::vector<LinearTap> bilinear_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

std::vector<int> nearest_taps(int in, int out) {
  std::vector<int> taps(out);
  for (int d = 0; d < out; ++d) {
    taps[d] = std::min(static_cast<int>(static_cast<long>(d) * in / out), in - 1);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample(const Tensor<T>& input, int th, int tw, Resample mode) {
  if (th < 1 || tw < 1) throw ShapeError("upsample: target size must be >= 1");
  const Shape& is = input.shape();
  const Shape os{is.n, is.c, th, tw};
  Tensor<T> out(os);
  if (mode == Resample::Nearest) {
    const auto ty = nearest_taps(is.h, th);
    const auto tx = nearest_taps(is.w, tw);
    for (int n = 0; n < is.n; ++n)
      for (int c = 0; c < is.c; ++c) {
        const T* in = input.plane(n, c);
        T* o = out.plane(n, c);
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x) o[y * tw + x] = in[ty[y] * is.w + tx[x]];
      }
    return out;
  }
  const auto ty = bilinear_taps(is.h, th);
  const auto tx = bilinear_taps(is.w, tw);
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c) {
      const T* in = input.plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < th; ++y) {
        const T ly = static_cast<T>(ty[y].frac);
        const T* r0 = in + static_cast<std::size_t>(ty[y].i0) * is.w;
        const T* r1 = in + static_cast<std::size_t>(ty[y].i1) * is.w;
        for (int x = 0; x < tw; ++x) {
          const T lx = static_cast<T>(tx[x].frac);
          const T top = (T(1) - lx) * r0[tx[x].i0] + lx * r0[tx[x].i1];
          const T bot = (T(1) - lx) * r1[tx[x].i0] + lx * r1[tx[x].i1];
          o[y * tw + x] = (T(1) - ly) * top + ly * bot;
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, const Shape& is, Resample mode) {
  const Shape& os = grad_out.shape();
  Tensor<T> gin(is);
  if (mode == Resample::Nearest) {
    const auto ty = nearest_taps(is.h, os.h);
    const auto tx = nearest_taps(is.w, os.w);
    for (int n = 0; n < is.n; ++n)
      for (int c = 0; c < is.c; ++c) {
        T* gi = gin.plane(n, c);
        const T* go = grad_out.plane(n, c);
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x) gi[ty[y] * is.w + tx[x]] += go[y * os.w + x];
      }
    return gin;
  }
  const auto ty = bilinear_taps(is.h, os.h);
  const auto tx = bilinear_taps(is.w, os.w);
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c) {
      T* gi = gin.plane(n, c);
      const T* go = grad_out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        const T ly = static_cast<T>(ty[y].frac);
        T* r0 = gi + static_cast<std::size_t>(ty[y].i0) * is.w;
        T* r1 = gi + static_cast<std::size_t>(ty[y].i1) * is.w;
        for (int x = 0; x < os.w; ++x) {
          const T lx = static_cast<T>(tx[x].frac);
          const T g = go[y * os.w + x];
          r0[tx[x].i0] += (T(1) - ly) * (T(1) - lx) * g;
          r0[tx[x].i1] += (T(1) - ly) * lx * g;
          r1[tx[x].i0] += ly * (T(1) - lx) * g;
          r1[tx[x].i1] += ly * lx * g;
        }
      }
    }
  return gin;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r) {
  const Shape& is = input.shape();
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
  if (is.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(is.c) + " not divisible by " +
                     std::to_string(r * r));
  }
  const Shape os{is.n, is.c / (r * r), is.h * r, is.w * r};
  Tensor<T> out(os);
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const T* src = input.plane(n, c * r * r + i * r + j);
          T* dst = out.plane(n, c);
          for (int h = 0; h < is.h; ++h)
            for (int w = 0; w < is.w; ++w) dst[(h * r + i) * os.w + w * r + j] = src[h * is.w + w];
        }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r) {
  const Shape& is = input.shape();
  if (r < 1) throw ShapeError("pixel_unshuffle: factor must be >= 1");
  if (is.h % r != 0 || is.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + std::to_string(is.h) + "x" +
                     std::to_string(is.w) + " not divisible by " + std::to_string(r));
  }
  const Shape os{is.n, is.c * r * r, is.h / r, is.w / r};
  Tensor<T> out(os);
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const T* src = input.plane(n, c);
          T* dst = out.plane(n, c * r * r + i * r + j);
          for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w) dst[h * os.w + w] = src[(h * r + i) * is.w + w * r + j];
        }
  return out;
}

// ---- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v > T(0) ? v : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  const T s = static_cast<T>(slope);
  return map_unary(x, [s](T v) { return v > T(0) ? v : s * v; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return gelu_scalar(v); });
}

template <typename T>
Tensor<T> h_swish(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v * std::clamp(v + T(3), T(0), T(6)) / T(6); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act, double slope) {
  switch (act) {
    case Activation::ReLU: return relu(x);
    case Activation::LeakyReLU: return leaky_relu(x, slope);
    case Activation::HSwish: return h_swish(x);
    case Activation::GELU: return gelu(x);
  }
  throw ConfigError("activate: unknown activation");
}

template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& g, Activation act, double slope) {
  const T s = static_cast<T>(slope);
  switch (act) {
    case Activation::ReLU:
      return map_binary(x, g, "relu_backward", [](T v, T gv) { return v > T(0) ? gv : T(0); });
    case Activation::LeakyReLU:
      return map_binary(x, g, "leaky_relu_backward", [s](T v, T gv) { return v > T(0) ? gv : s * gv; });
    case Activation::HSwish:
      return map_binary(x, g, "h_swish_backward", [](T v, T gv) {
        if (v <= T(-3)) return T(0);
        if (v >= T(3)) return gv;
        return gv * (T(2) * v + T(3)) / T(6);
      });
    case Activation::GELU:
      return map_binary(x, g, "gelu_backward", [](T v, T gv) { return gv * gelu_grad_scalar(v); });
  }
  throw ConfigError("activate_backward: unknown activation");
}

template <typename T>
double activation_kink_margin(const Tensor<T>& x, Activation act) {
  double m = std::numeric_limits<double>::infinity();
  if (act == Activation::GELU) return m;
  for (T v : x.data()) {
    const double d = static_cast<double>(v);
    if (act == Activation::HSwish) {
      m = std::min({m, std::abs(d - 3.0), std::abs(d + 3.0)});
    } else {
      m = std::min(m, std::abs(d));
    }
  }
  return m;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return map_unary(a, [](T x) { return -x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map_unary(a, [s](T x) { return x * s; });
}

template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape& xs = x.shape();
  const Shape& ss = s.shape();
  if (ss.c != xs.c || ss.h != 1 || ss.w != 1 || (ss.n != 1 && ss.n != xs.n)) {
    throw ShapeError("mul_channel: scale shape " + ss.str() + " incompatible with " + xs.str());
  }
  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T f = s.at(ss.n == 1 ? 0 : n, c, 0, 0);
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < xs.plane(); ++i) dst[i] = src[i] * f;
    }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: N/H/W mismatch " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (int n = 0; n < first.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const T* src = p.plane(n, 0);
      std::copy(src, src + static_cast<std::size_t>(p.shape().c) * first.plane(), out.plane(n, c0));
      c0 += p.shape().c;
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int count) {
  const Shape& s = t.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(s.c) + " channels");
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const T* src = t.plane(n, begin);
    std::copy(src, src + static_cast<std::size_t>(count) * s.plane(), out.plane(n, 0));
  }
  return out;
}

template <typename T>
Tensor<T> channel_contrast(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const double hw = static_cast<double>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      double mean = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) mean += p[i];
      mean /= hw;
      double var = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
      out.at(n, c, 0, 0) = static_cast<T>(mean + std::sqrt(var / hw));
    }
  return out;
}

template <typename T>
Tensor<T> channel_contrast_backward(const Tensor<T>& x, const Tensor<T>& g) {
  const Shape& s = x.shape();
  Tensor<T> gin(s);
  const double hw = static_cast<double>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      double mean = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) mean += p[i];
      mean /= hw;
      double var = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
      const double sd = std::sqrt(var / hw);
      const double gv = g.at(n, c, 0, 0);
      T* q = gin.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double dsd = sd > 0 ? (p[i] - mean) / (hw * sd) : 0.0;
        q[i] = static_cast<T>(gv * (1.0 / hw + dsd));
      }
    }
  return gin;
}

template <typename T>
T sum(const Tensor<T>& t) {
  long double acc = 0;
  for (T v : t.data()) acc += v;
  return static_cast<T>(acc);
}

#define BSRN_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,                 \
                            const ConvGeometry&);                                                 \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                      ConvGeometry);                                              \
  template Tensor<T> pointwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);      \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&,      \
                                           const ConvGeometry&);                                  \
  template Tensor<T> conv2d_backward_weight(const Tensor<T>&, const Tensor<T>&, const Shape&,     \
                                            const ConvGeometry&);                                 \
  template Tensor<T> channel_sum(const Tensor<T>&);                                               \
  template MaxPoolResult<T> max_pool2d_with_indices(const Tensor<T>&, int, int);                  \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int);                                      \
  template Tensor<T> max_pool2d_backward(const Tensor<T>&, const std::vector<std::int32_t>&,      \
                                         const Shape&);                                           \
  template Tensor<T> upsample(const Tensor<T>&, int, int, Resample);                              \
  template Tensor<T> upsample_backward(const Tensor<T>&, const Shape&, Resample);                 \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                        \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> h_swish(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> activate(const Tensor<T>&, Activation, double);                              \
  template Tensor<T> activate_backward(const Tensor<T>&, const Tensor<T>&, Activation, double);   \
  template double activation_kink_margin(const Tensor<T>&, Activation);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> neg(const Tensor<T>&);                                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> mul_channel(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);                                  \
  template Tensor<T> channel_contrast(const Tensor<T>&);                                          \
  template Tensor<T> channel_contrast_backward(const Tensor<T>&, const Tensor<T>&);               \
  template T sum(const Tensor<T>&);

BSRN_INSTANTIATE_OPS(float)
BSRN_INSTANTIATE_OPS(double)

}  // namespace bsrn
