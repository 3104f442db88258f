// Copyright 2026 The wsaed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable layers used by the DenseNet model. Activations are NCHW;
// dense inputs are [N, K]. Reductions accumulate in double.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "wsaed/autograd.hpp"

namespace wsaed {

enum class Mode { kTrain, kEval };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride_h, stride_w;
  std::size_t pad_h, pad_w;
  std::size_t out_h, out_w;

  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool pointwise() const {
    return kernel_h == 1 && kernel_w == 1 && stride_h == 1 && stride_w == 1 && pad_h == 0 &&
           pad_w == 0;
  }
};

// Output columns [lo, hi) of a row whose input column ow * stride + offset
// lands inside [0, width).
inline std::pair<std::size_t, std::size_t> valid_columns(std::size_t out_w, std::size_t stride,
                                                         std::ptrdiff_t offset, std::size_t width) {
  std::ptrdiff_t lo = 0, hi = static_cast<std::ptrdiff_t>(out_w);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  if (offset < 0) lo = std::min(hi, (-offset + s - 1) / s);  // padding wider than the output
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(width) - 1 - offset;  // ow * s <= last
  hi = last < 0 ? 0 : std::min(hi, last / s + 1);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Stride-1 convolution whose output plane equals the input plane: each
// kernel tap is the whole plane shifted by a fixed offset, with the columns
// that wrap across a row boundary zeroed.
struct PlaneShift {
  std::ptrdiff_t delta;          // source index minus destination index
  std::size_t row_lo, row_hi;    // output rows with an in-bounds source row
  std::size_t col_lo, col_hi;    // output columns with an in-bounds source column
};

inline bool same_plane(const ConvGeometry& g) {
  return g.stride_h == 1 && g.stride_w == 1 && g.out_h == g.height && g.out_w == g.width;
}

inline PlaneShift plane_shift(const ConvGeometry& g, std::size_t ki, std::size_t kj) {
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(g.pad_h);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad_w);
  const auto rows = valid_columns(g.out_h, 1, oh, g.height);
  const auto cols = valid_columns(g.out_w, 1, ow, g.width);
  return {oh * static_cast<std::ptrdiff_t>(g.width) + ow, rows.first, rows.second, cols.first, cols.second};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.out_h * g.out_w;
  if (same_plane(g)) {
    const std::size_t W = g.width;
    for (std::size_t c = 0; c < g.channels; ++c) {
      const T* xc = x + c * plane;
      for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
          T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
          const PlaneShift ps = plane_shift(g, ki, kj);
          std::fill(row, row + ps.row_lo * W, T(0));
          std::fill(row + ps.row_hi * W, row + plane, T(0));
          if (ps.row_lo >= ps.row_hi) continue;
          // Wrapped entries at either end fall outside the source plane;
          // they are border columns and get zeroed below.
          std::size_t p0 = ps.row_lo * W, p1 = ps.row_hi * W;
          while (static_cast<std::ptrdiff_t>(p0) + ps.delta < 0) row[p0++] = T(0);
          while (static_cast<std::ptrdiff_t>(p1) + ps.delta > static_cast<std::ptrdiff_t>(plane)) row[--p1] = T(0);
          if (p0 < p1)
            std::copy(xc + (static_cast<std::ptrdiff_t>(p0) + ps.delta),
                    xc + (static_cast<std::ptrdiff_t>(p1) + ps.delta), row + p0);
          if (ps.col_lo > 0 || ps.col_hi < W) {
            for (std::size_t oh = ps.row_lo; oh < ps.row_hi; ++oh) {
              T* r = row + oh * W;
              std::fill(r, r + ps.col_lo, T(0));
              std::fill(r + ps.col_hi, r + W, T(0));
            }
          }
        }
      }
    }
    return;
  }
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad_w);
        const auto [lo, hi] = valid_columns(g.out_w, g.stride_w, off_w, g.width);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * g.width;
          std::fill(dst, dst + lo, T(0));
          if (g.stride_w == 1) {
            std::copy(src + (static_cast<std::ptrdiff_t>(lo) + off_w), src + (static_cast<std::ptrdiff_t>(hi) + off_w),
                      dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow)
              dst[ow] = src[static_cast<std::ptrdiff_t>(ow * g.stride_w) + off_w];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

// Adds the column buffer back onto the image it was gathered from. The
// same-plane path zeroes the border entries of `col` in place.
template <typename T>
void col2im_add(T* col, const ConvGeometry& g, T* x) {
  const std::size_t plane = g.out_h * g.out_w;
  if (same_plane(g)) {
    const std::size_t W = g.width;
    for (std::size_t c = 0; c < g.channels; ++c) {
      T* __restrict xc = x + c * plane;
      for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
          T* __restrict row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
          const PlaneShift ps = plane_shift(g, ki, kj);
          if (ps.row_lo >= ps.row_hi) continue;
          if (ps.col_lo > 0 || ps.col_hi < W) {
            for (std::size_t oh = ps.row_lo; oh < ps.row_hi; ++oh) {
              T* r = row + oh * W;
              std::fill(r, r + ps.col_lo, T(0));
              std::fill(r + ps.col_hi, r + W, T(0));
            }
          }
          std::size_t p0 = ps.row_lo * W, p1 = ps.row_hi * W;
          while (static_cast<std::ptrdiff_t>(p0) + ps.delta < 0) ++p0;
          while (static_cast<std::ptrdiff_t>(p1) + ps.delta > static_cast<std::ptrdiff_t>(plane)) --p1;
          if (p0 >= p1) continue;
          T* __restrict dst = xc + (static_cast<std::ptrdiff_t>(p0) + ps.delta);
          const T* __restrict src = row + p0;
          for (std::size_t i = 0; i < p1 - p0; ++i) dst[i] += src[i];
        }
      }
    }
    return;
  }
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad_w);
        const auto [lo, hi] = valid_columns(g.out_w, g.stride_w, off_w, g.width);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const T* src = row + oh * g.out_w;
          T* dst = xc + static_cast<std::size_t>(ih) * g.width;
          if (g.stride_w == 1) {
            T* d = dst + off_w;
            for (std::size_t ow = lo; ow < hi; ++ow) d[ow] += src[ow];
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow)
              dst[static_cast<std::ptrdiff_t>(ow * g.stride_w) + off_w] += src[ow];
          }
        }
      }
    }
  }
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace detail

// Cross-correlation without bias. input [N, Cin, H, W], kernel [Cout, Cin, kh, kw].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, std::array<std::size_t, 2> stride = {1, 1},
              std::array<std::size_t, 2> padding = {0, 0}) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  WSAED_CHECK_SHAPE(xs.size() == 4, "conv2d: input must be NCHW, got ", shape_str(xs));
  WSAED_CHECK_SHAPE(ks.size() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw], got ", shape_str(ks));
  WSAED_CHECK_SHAPE(xs[1] == ks[1], "conv2d: input has ", xs[1], " channels but kernel expects ",
                    ks[1]);
  WSAED_CHECK_SHAPE(stride[0] > 0 && stride[1] > 0, "conv2d: stride must be positive");
  WSAED_CHECK_SHAPE(xs[2] + 2 * padding[0] >= ks[2] && xs[3] + 2 * padding[1] >= ks[3],
                    "conv2d: kernel ", shape_str(ks), " larger than padded input ", shape_str(xs));

  detail::ConvGeometry g{xs[1], xs[2], xs[3], ks[2], ks[3], stride[0], stride[1], padding[0], padding[1],
                         0, 0};
  g.out_h = (g.height + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  g.out_w = (g.width + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  const std::size_t batch = xs[0];
  const std::size_t out_c = ks[0];
  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = out_c * g.col_cols();

  auto out = Tensor<T>::uninitialized({batch, out_c, g.out_h, g.out_w});
  detail::ConstMatMap<T> k(kernel.value().data(), out_c, g.col_rows());
  auto col = std::make_unique_for_overwrite<T[]>(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* x = input.value().data() + n * in_plane;
    if (!g.pointwise()) detail::im2col(x, g, col.get());
    detail::ConstMatMap<T> cm(g.pointwise() ? x : col.get(), g.col_rows(), g.col_cols());
    detail::MatMap<T> y(out.data() + n * out_plane, out_c, g.col_cols());
    y.noalias() = k * cm;
  }

  return Var<T>::make_result(std::move(out), {input, kernel}, [g, batch, out_c, in_plane,
                                                                out_plane](Node<T>& self) {
    Node<T>& x_node = *self.inputs[0];
    Node<T>& k_node = *self.inputs[1];
    detail::ConstMatMap<T> k(k_node.value.data(), out_c, g.col_rows());
    auto col = std::make_unique_for_overwrite<T[]>(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
    auto dcol = std::make_unique_for_overwrite<T[]>(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
    T* dk_data = k_node.requires_grad ? k_node.grad_buffer().data() : nullptr;
    T* dx_data = x_node.requires_grad ? x_node.grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      detail::ConstMatMap<T> dy(self.grad.data() + n * out_plane, out_c, g.col_cols());
      const T* x = x_node.value.data() + n * in_plane;
      if (dk_data) {
        if (!g.pointwise()) detail::im2col(x, g, col.get());
        detail::ConstMatMap<T> cm(g.pointwise() ? x : col.get(), g.col_rows(), g.col_cols());
        detail::MatMap<T> dk(dk_data, out_c, g.col_rows());
        dk.noalias() += dy * cm.transpose();
      }
      if (dx_data) {
        if (g.pointwise()) {
          detail::MatMap<T> dx(dx_data + n * in_plane, g.col_rows(), g.col_cols());
          dx.noalias() += k.transpose() * dy;
        } else {
          detail::MatMap<T> dc(dcol.get(), g.col_rows(), g.col_cols());
          dc.noalias() = k.transpose() * dy;
          detail::col2im_add(dcol.get(), g, dx_data + n * in_plane);
        }
      }
    }
  });
}

namespace detail {

struct ChannelLayout {
  std::size_t batch, channels, inner;
};

inline ChannelLayout channel_layout(const Shape& s) {
  WSAED_CHECK_SHAPE(s.size() == 2 || s.size() == 4, "expected [N,C] or [N,C,H,W], got ",
                    shape_str(s));
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

}  // namespace detail

// Per-channel batch normalization. Train mode normalizes by batch statistics
// and folds them into the running estimates:
//   running = momentum * running + (1 - momentum) * batch
// (running variance uses the unbiased estimate). Eval mode uses the running
// estimates and leaves them untouched.
template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                  double momentum = 0.9, double eps = 1e-5) {
  const auto lay = detail::channel_layout(input.shape());
  const std::size_t C = lay.channels;
  WSAED_CHECK_SHAPE(gamma.value().size() == C && beta.value().size() == C &&
                        running_mean.size() == C && running_var.size() == C,
                    "batch_norm: per-channel parameters must have ", C, " entries");
  const std::size_t count = lay.batch * lay.inner;
  if (mode == Mode::kTrain) WSAED_CHECK_SHAPE(count > 0, "batch_norm: zero batch in train mode");

  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  using ConstVecMap = Eigen::Map<const Vec>;
  std::vector<double> mu(C), inv_std(C);
  const T* x = input.value().data();
  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < lay.batch; ++n)
        s += ConstVecMap(x + (n * C + c) * lay.inner, lay.inner).template cast<double>().sum();
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < lay.batch; ++n)
        ss += (ConstVecMap(x + (n * C + c) * lay.inner, lay.inner).template cast<double>() - m)
                  .square()
                  .sum();
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1.0 - momentum) * m);
      running_var[c] = static_cast<T>(momentum * running_var[c] + (1.0 - momentum) * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    }
  }

  auto out = Tensor<T>::uninitialized(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double scale = gamma.value()[c] * inv_std[c];
    const T a = static_cast<T>(scale);
    const T b = static_cast<T>(beta.value()[c] - mu[c] * scale);
    for (std::size_t n = 0; n < lay.batch; ++n) {
      const T* p = x + (n * C + c) * lay.inner;
      T* q = out.data() + (n * C + c) * lay.inner;
      for (std::size_t i = 0; i < lay.inner; ++i) q[i] = p[i] * a + b;
    }
  }

  return Var<T>::make_result(
      std::move(out), {input, gamma, beta},
      [lay, mode, count, mu = std::move(mu), inv_std = std::move(inv_std)](Node<T>& self) {
        const std::size_t C = lay.channels;
        Node<T>& x_node = *self.inputs[0];
        Node<T>& g_node = *self.inputs[1];
        Node<T>& b_node = *self.inputs[2];
        const T* x = x_node.value.data();
        const T* dy = self.grad.data();
        // sum(dy * xhat) = inv_std * (sum(dy * x) - mu * sum(dy))
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          double a = 0.0, b = 0.0;
          for (std::size_t n = 0; n < lay.batch; ++n) {
            const std::size_t off = (n * C + c) * lay.inner;
            ConstVecMap d(dy + off, lay.inner), v(x + off, lay.inner);
            a += d.template cast<double>().sum();
            b += (d.template cast<double>() * v.template cast<double>()).sum();
          }
          sum_dy[c] = a;
          sum_dy_xhat[c] = inv_std[c] * (b - mu[c] * a);
        }
        if (g_node.requires_grad) {
          auto& dg = g_node.grad_buffer();
          for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (b_node.requires_grad) {
          auto& db = b_node.grad_buffer();
          for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<T>(sum_dy[c]);
        }
        if (!x_node.requires_grad) return;
        T* dx = x_node.grad_buffer().data();
        const double m = static_cast<double>(count);
        for (std::size_t c = 0; c < C; ++c) {
          // dx += k * (dy - mean_dy - xhat * mean_dy_xhat), written as
          // dx += k * dy + u * x + v.
          const double k = g_node.value[c] * inv_std[c];
          double u = 0.0, v = 0.0;
          if (mode == Mode::kTrain) {
            const double slope = k * inv_std[c] * sum_dy_xhat[c] / m;
            u = -slope;
            v = -k * sum_dy[c] / m + slope * mu[c];
          }
          const T kt = static_cast<T>(k), ut = static_cast<T>(u), vt = static_cast<T>(v);
          for (std::size_t n = 0; n < lay.batch; ++n) {
            const std::size_t off = (n * C + c) * lay.inner;
            for (std::size_t i = 0; i < lay.inner; ++i) dx[off + i] += kt * dy[off + i] + ut * x[off + i] + vt;
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  auto out = Tensor<T>::uninitialized(input.shape());
  const T* x = input.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return Var<T>::make_result(std::move(out), {input}, [](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    const T* y = self.value.data();
    const T* dy = self.grad.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) dx[i] += y[i] > T(0) ? dy[i] : T(0);
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  auto out = Tensor<T>::uninitialized(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(input.value()[i]);
  return Var<T>::make_result(std::move(out), {input}, [](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T y = self.value[i];
      dx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

// Non-overlapping average pooling, window = stride = `kernel`, ceil mode.
// Trailing partial windows average only their in-bounds elements.
template <typename T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t kernel = 2) {
  const Shape& s = input.shape();
  WSAED_CHECK_SHAPE(s.size() == 4, "avg_pool2d: input must be NCHW, got ", shape_str(s));
  WSAED_CHECK_SHAPE(kernel > 0, "avg_pool2d: kernel must be positive");
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
  const std::size_t Ho = detail::ceil_div(H, kernel), Wo = detail::ceil_div(W, kernel);
  auto out = Tensor<T>::uninitialized({s[0], s[1], Ho, Wo});
  const T* x = input.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      const std::size_t h0 = oh * kernel, h1 = std::min(H, h0 + kernel);
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const std::size_t w0 = ow * kernel, w1 = std::min(W, w0 + kernel);
        double acc = 0.0;
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) acc += x[(p * H + h) * W + w];
        out[(p * Ho + oh) * Wo + ow] = static_cast<T>(acc / static_cast<double>((h1 - h0) * (w1 - w0)));
      }
    }
  }
  return Var<T>::make_result(std::move(out), {input}, [=](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        const std::size_t h0 = oh * kernel, h1 = std::min(H, h0 + kernel);
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          const std::size_t w0 = ow * kernel, w1 = std::min(W, w0 + kernel);
          const T g = self.grad[(p * Ho + oh) * Wo + ow] / static_cast<T>((h1 - h0) * (w1 - w0));
          for (std::size_t h = h0; h < h1; ++h)
            for (std::size_t w = w0; w < w1; ++w) dx[(p * H + h) * W + w] += g;
        }
      }
    }
  });
}

// [N, C, H, W] -> [N, C], mean over the spatial plane.
template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  const Shape& s = input.shape();
  WSAED_CHECK_SHAPE(s.size() == 4, "global_avg_pool: input must be NCHW, got ", shape_str(s));
  const std::size_t planes = s[0] * s[1], inner = s[2] * s[3];
  WSAED_CHECK_SHAPE(inner > 0, "global_avg_pool: empty spatial plane");
  auto out = Tensor<T>::uninitialized({s[0], s[1]});
  const T* x = input.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += x[p * inner + i];
    out[p] = static_cast<T>(acc / static_cast<double>(inner));
  }
  return Var<T>::make_result(std::move(out), {input}, [planes, inner](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t p = 0; p < planes; ++p) {
      const T g = self.grad[p] / static_cast<T>(inner);
      for (std::size_t i = 0; i < inner; ++i) dx[p * inner + i] += g;
    }
  });
}

// x [N, K] times weight [C, K] transposed -> [N, C]. Bias is optional.
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias = Var<T>()) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  WSAED_CHECK_SHAPE(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1], "dense: input ",
                    shape_str(xs), " incompatible with weight ", shape_str(ws));
  const std::size_t N = xs[0], K = xs[1], C = ws[0];
  if (bias.defined())
    WSAED_CHECK_SHAPE(bias.value().size() == C, "dense: bias must have ", C, " entries");
  auto out = Tensor<T>::uninitialized({N, C});
  detail::ConstMatMap<T> x(input.value().data(), N, K);
  detail::ConstMatMap<T> w(weight.value().data(), C, K);
  detail::MatMap<T> y(out.data(), N, C);
  y.noalias() = x * w.transpose();
  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) out[n * C + c] += bias.value()[c];
    inputs.push_back(bias);
  }
  return Var<T>::make_result(std::move(out), std::move(inputs), [N, K, C](Node<T>& self) {
    Node<T>& x_node = *self.inputs[0];
    Node<T>& w_node = *self.inputs[1];
    detail::ConstMatMap<T> dy(self.grad.data(), N, C);
    if (x_node.requires_grad) {
      detail::MatMap<T> dx(x_node.grad_buffer().data(), N, K);
      detail::ConstMatMap<T> w(w_node.value.data(), C, K);
      dx.noalias() += dy * w;
    }
    if (w_node.requires_grad) {
      detail::MatMap<T> dw(w_node.grad_buffer().data(), C, K);
      detail::ConstMatMap<T> x(x_node.value.data(), N, K);
      dw.noalias() += dy.transpose() * x;
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& db = self.inputs[2]->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) acc += self.grad[n * C + c];
        db[c] += static_cast<T>(acc);
      }
    }
  });
}

// Joins along the channel axis (dim 1). All parts share every other dim.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  WSAED_CHECK_SHAPE(!parts.empty(), "concat_channels: no inputs");
  const auto lay0 = detail::channel_layout(parts[0].shape());
  std::vector<std::size_t> chans;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    WSAED_CHECK_SHAPE(s.size() == parts[0].shape().size() && s[0] == lay0.batch &&
                          std::equal(s.begin() + 2, s.end(), parts[0].shape().begin() + 2),
                      "concat_channels: ", shape_str(s), " does not match ",
                      shape_str(parts[0].shape()));
    chans.push_back(s[1]);
    total += s[1];
  }
  Shape out_shape = parts[0].shape();
  out_shape[1] = total;
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t inner = lay0.inner;
  for (std::size_t n = 0; n < lay0.batch; ++n) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].value().data() + n * chans[k] * inner;
      std::copy(src, src + chans[k] * inner, out.data() + (n * total + c0) * inner);
      c0 += chans[k];
    }
  }
  return Var<T>::make_result(std::move(out), parts, [chans, total, inner, batch = lay0.batch](Node<T>& self) {
    for (std::size_t n = 0; n < batch; ++n) {
      std::size_t c0 = 0;
      for (std::size_t k = 0; k < chans.size(); ++k) {
        Node<T>& in = *self.inputs[k];
        if (in.requires_grad) {
          const T* src = self.grad.data() + (n * total + c0) * inner;
          T* dst = in.grad_buffer().data() + n * chans[k] * inner;
          for (std::size_t i = 0; i < chans[k] * inner; ++i) dst[i] += src[i];
        }
        c0 += chans[k];
      }
    }
  });
}

// Channels [begin, end) of a [N, C, ...] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& input, std::size_t begin, std::size_t end) {
  const auto lay = detail::channel_layout(input.shape());
  WSAED_CHECK_SHAPE(begin < end && end <= lay.channels, "slice_channels: bad range [", begin, ",",
                    end, ") for ", lay.channels, " channels");
  Shape out_shape = input.shape();
  out_shape[1] = end - begin;
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t width = (end - begin) * lay.inner;
  for (std::size_t n = 0; n < lay.batch; ++n) {
    const T* src = input.value().data() + (n * lay.channels + begin) * lay.inner;
    std::copy(src, src + width, out.data() + n * width);
  }
  return Var<T>::make_result(std::move(out), {input}, [lay, begin, width](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t n = 0; n < lay.batch; ++n) {
      T* dst = dx + (n * lay.channels + begin) * lay.inner;
      for (std::size_t i = 0; i < width; ++i) dst[i] += self.grad[n * width + i];
    }
  });
}

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy over every (sample, class) entry. Probabilities
// are clamped to [kBceClamp, 1 - kBceClamp]; the clamp has zero gradient.
template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& target) {
  WSAED_CHECK_SHAPE(pred.shape() == target.shape(), "bce_loss: prediction ", shape_str(pred.shape()),
                    " vs target ", shape_str(target.shape()));
  WSAED_CHECK_SHAPE(!target.empty(), "bce_loss: empty input");
  const std::size_t count = target.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp<double>(pred.value()[i], kBceClamp, 1.0 - kBceClamp);
    const double t = target[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(count)));
  return Var<T>::make_result(std::move(out), {pred}, [target, count](Node<T>& self) {
    Node<T>& p_node = *self.inputs[0];
    T* dp = p_node.grad_buffer().data();
    const double g = self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double p = p_node.value[i];
      if (p <= kBceClamp || p >= 1.0 - kBceClamp) continue;
      dp[i] += static_cast<T>(g * (p - target[i]) / (p * (1.0 - p)));
    }
  });
}

// Same loss as bce_loss(sigmoid(logits), target) without the clamp, evaluated
// in the numerically stable log-sum-exp form.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target) {
  WSAED_CHECK_SHAPE(logits.shape() == target.shape(), "bce_with_logits: logits ",
                    shape_str(logits.shape()), " vs target ", shape_str(target.shape()));
  WSAED_CHECK_SHAPE(!target.empty(), "bce_with_logits: empty input");
  const std::size_t count = target.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double s = logits.value()[i];
    acc += std::max(s, 0.0) - s * target[i] + std::log1p(std::exp(-std::abs(s)));
  }
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(count)));
  return Var<T>::make_result(std::move(out), {logits}, [target, count](Node<T>& self) {
    Node<T>& s_node = *self.inputs[0];
    T* ds = s_node.grad_buffer().data();
    const double g = self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i)
      ds[i] += static_cast<T>(g * (sigmoid_scalar<double>(s_node.value[i]) - target[i]));
  });
}

}  // namespace wsaed
