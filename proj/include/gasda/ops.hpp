#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gasda/tensor.hpp"

// Differentiable primitives. Every function validates shapes, computes the
// forward values, and registers its backward rule on the active graph when an
// input requires grad. Elementwise binaries broadcast per dimension (a size-1
// dimension stretches to the other operand's size).
namespace gasda::ops {

enum class PadMode { kZero, kReflect, kReplicate };

namespace detail {

struct Strides {
  std::size_t n, c, h, w;
};

inline Strides broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t sw = 1, sh = s.w, sc = s.h * s.w, sn = s.c * s.h * s.w;
  return {s.n == 1 && out.n != 1 ? 0 : sn, s.c == 1 && out.c != 1 ? 0 : sc,
          s.h == 1 && out.h != 1 ? 0 : sh, s.w == 1 && out.w != 1 ? 0 : sw};
}

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, std::string_view kind, const Shape& sa,
                                 const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(kind) + ": cannot broadcast " + sa.str() + " with " + sb.str());
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view kind) {
  return {broadcast_dim(a.n, b.n, kind, a, b), broadcast_dim(a.c, b.c, kind, a, b),
          broadcast_dim(a.h, b.h, kind, a, b), broadcast_dim(a.w, b.w, kind, a, b)};
}

// Calls fn(out_index, a_index, b_index) in row-major output order.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  if (sa == out && sb == out) {
    const std::size_t total = out.numel();
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const Strides a = broadcast_strides(sa, out), b = broadcast_strides(sb, out);
  std::size_t i = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x, ++i)
          fn(i, n * a.n + c * a.c + y * a.h + x * a.w, n * b.n + c * b.c + y * b.h + x * b.w);
}

// Elementwise binary op. `forward(a, b)` gives the value, `da(a, b, y)` and
// `db(a, b, y)` the local partial derivatives.
template <class T, class F, class DA, class DB>
Tensor<T> binary(std::string_view kind, const Tensor<T>& a, const Tensor<T>& b, F forward, DA da, DB db) {
  const Shape out = broadcast_shape(a.shape(), b.shape(), kind);
  std::vector<T> v(out.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { v[i] = forward(av[ia], bv[ib]); });
  return gasda::detail::emit<T>(kind, out, std::move(v), {&a, &b},
                                [a, b, out, da, db](const std::vector<T>& g, const std::vector<T>& y) {
                                  const auto av = a.values();
                                  const auto bv = b.values();
                                  T* ga = a.requires_grad() ? gasda::detail::grad_buffer(a.data()).data() : nullptr;
                                  T* gb = b.requires_grad() ? gasda::detail::grad_buffer(b.data()).data() : nullptr;
                                  for_each_broadcast(out, a.shape(), b.shape(),
                                                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                                       if (ga) ga[ia] += g[i] * da(av[ia], bv[ib], y[i]);
                                                       if (gb) gb[ib] += g[i] * db(av[ia], bv[ib], y[i]);
                                                     });
                                });
}

// Elementwise unary op; `deriv(x, y)` is dy/dx.
template <class T, class F, class D>
Tensor<T> unary(std::string_view kind, const Tensor<T>& x, F forward, D deriv) {
  const auto xv = x.values();
  std::vector<T> v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) v[i] = forward(xv[i]);
  return gasda::detail::emit<T>(kind, x.shape(), std::move(v), {&x},
                                [x, deriv](const std::vector<T>& g, const std::vector<T>& y) {
                                  const auto xv = x.values();
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
                                });
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// GEMM operands are always owned (aligned) matrices: Eigen's peeling, and so
// the rounding, must not depend on where the heap placed a tensor.
template <class T>
RowMat<T> owned(const T* p, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class T>
void add_into(T* dst, const RowMat<T>& m) {
  const T* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Unfolds one (C,H,W) image into a (C*K*K, Ho*Wo) column matrix.
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = img + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (y < 0 || y >= ih) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + y * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (x < 0 || x >= iw) ? T(0) : src[x];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into a (C,H,W) image.
template <class T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = img + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= ih) continue;
          const T* src = row + oy * wo;
          T* dst = plane + y * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (x >= 0 && x < iw) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

inline std::ptrdiff_t pad_source_index(std::ptrdiff_t i, std::ptrdiff_t n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PadMode::kZero:
      return -1;
    case PadMode::kReplicate:
      return i < 0 ? 0 : n - 1;
    case PadMode::kReflect: {
      if (n == 1) return 0;
      const std::ptrdiff_t period = 2 * (n - 1);
      std::ptrdiff_t j = i % period;
      if (j < 0) j += period;
      return j < n ? j : period - j;
    }
  }
  return -1;
}


// Interpolation tap for coordinate u on a row of w samples: value is
// (1-frac)*row[x0] + frac*row[x0+1]. Integer u uses the interval [u-1, u];
// coordinates outside [0, w-1] are clamped and flagged.
template <class T>
struct LinearTap {
  std::uint32_t x0 = 0;
  T frac = T(0);
  bool clamped = false;
};

template <class T>
LinearTap<T> linear_tap(T u, std::size_t w) {
  LinearTap<T> t;
  const T hi = static_cast<T>(w - 1);
  if (w == 1 || u <= T(0)) {
    t.clamped = u < T(0) || w == 1;
  } else if (u >= hi) {
    t.x0 = static_cast<std::uint32_t>(w - 2);
    t.frac = T(1);
    t.clamped = u > hi;
  } else {
    const T fl = std::floor(u);
    const std::size_t x0 = fl == u ? static_cast<std::size_t>(fl) - 1 : static_cast<std::size_t>(fl);
    t.x0 = static_cast<std::uint32_t>(x0);
    t.frac = u - static_cast<T>(x0);
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------- arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "subtract", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "multiply", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "divide", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T q) { return -q / y; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "scalar_multiply", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// ------------------------------------------------------------- reductions

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto xv = x.values();
  if (xv.empty()) throw ShapeError("mean: empty tensor");
  T acc = 0;
  for (const T v : xv) acc += v;
  const T inv = T(1) / static_cast<T>(xv.size());
  return gasda::detail::emit<T>("mean", kScalarShape, {acc * inv}, {&x},
                                [x, inv](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  const T gi = g[0] * inv;
                                  for (T& v : gx) v += gi;
                                });
}

// Mean over the channel axis: (N,C,H,W) -> (N,1,H,W).
template <class T>
Tensor<T> mean_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape out{s.n, 1, s.h, s.w};
  const auto xv = x.values();
  std::vector<T> v(out.numel(), T(0));
  const T inv = T(1) / static_cast<T>(s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t p = 0; p < s.plane(); ++p) v[n * s.plane() + p] += xv[(n * s.c + c) * s.plane() + p];
  for (T& e : v) e *= inv;
  return gasda::detail::emit<T>("mean_channels", out, std::move(v), {&x},
                                [x, s, inv](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  for (std::size_t n = 0; n < s.n; ++n)
                                    for (std::size_t c = 0; c < s.c; ++c)
                                      for (std::size_t p = 0; p < s.plane(); ++p)
                                        gx[(n * s.c + c) * s.plane() + p] += g[n * s.plane() + p] * inv;
                                });
}

// --------------------------------------------------------------- pointwise

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  // d|x|/dx at 0 is defined as 0.
  return detail::unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (const T v : x.values()) {
    if (v < T(0)) throw NumericError("sqrt: negative input");
  }
  return detail::unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

inline constexpr double kLeakySlope = 0.2;

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(kLeakySlope)) {
  return detail::unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

// ---------------------------------------------------------- convolutions

// x: (N,Cin,H,W); weight: (Cout,Cin,K,K); bias: (1,Cout,1,1) or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t pad = 0) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != xs.c) throw ShapeError("conv2d: input " + xs.str() + " vs weight " + ws.str());
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t k = ws.h, cout = ws.n, cin = xs.c;
  if (xs.h + 2 * pad < k || xs.w + 2 * pad < k) throw ShapeError("conv2d: input smaller than kernel");
  if (bias.defined() && bias.shape() != Shape{1, cout, 1, 1}) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " for " + std::to_string(cout) + " outputs");
  }
  const std::size_t ho = detail::conv_out_dim(xs.h, k, stride, pad);
  const std::size_t wo = detail::conv_out_dim(xs.w, k, stride, pad);
  const Shape out{xs.n, cout, ho, wo};
  const std::size_t rows = cin * k * k, cols = ho * wo;

  std::vector<T> v(out.numel(), T(0));
  const detail::RowMat<T> wm = detail::owned(weight.values().data(), cout, rows);
  detail::RowMat<T> col(rows, cols), om(cout, cols);
  for (std::size_t n = 0; n < xs.n; ++n) {
    detail::im2col(x.values().data() + n * cin * xs.plane(), cin, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
    om.noalias() = wm * col;
    T* dst = v.data() + n * cout * cols;
    detail::add_into(dst, om);
    if (bias.defined()) {
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < cols; ++p) dst[o * cols + p] += bias[o];
    }
  }

  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return gasda::detail::emit<T>(
      "conv2d", out, std::move(v), inputs,
      [x, weight, bias, xs, k, cout, cin, stride, pad, ho, wo, rows, cols](const std::vector<T>& g,
                                                                          const std::vector<T>&) {
        const detail::RowMat<T> wm = detail::owned(weight.values().data(), cout, rows);
        const bool need_x = x.requires_grad(), need_w = weight.requires_grad();
        const bool need_b = bias.defined() && bias.requires_grad();
        T* gb = need_b ? gasda::detail::grad_buffer(bias.data()).data() : nullptr;
        T* gw = need_w ? gasda::detail::grad_buffer(weight.data()).data() : nullptr;
        T* gx = need_x ? gasda::detail::grad_buffer(x.data()).data() : nullptr;
        detail::RowMat<T> col(rows, cols), gm(cout, cols);
        detail::RowMat<T> acc_w = detail::RowMat<T>::Zero(need_w ? cout : 0, need_w ? rows : 0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const T* gn = g.data() + n * cout * cols;
          if (need_b) {
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t p = 0; p < cols; ++p) gb[o] += gn[o * cols + p];
          }
          if (!need_w && !need_x) continue;
          gm = detail::owned(gn, cout, cols);
          if (need_w) {
            detail::im2col(x.values().data() + n * cin * xs.plane(), cin, xs.h, xs.w, k, stride, pad, ho, wo,
                           col.data());
            acc_w.noalias() += gm * col.transpose();
          }
          if (need_x) {
            col.noalias() = wm.transpose() * gm;
            detail::col2im(col.data(), cin, xs.h, xs.w, k, stride, pad, ho, wo, gx + n * cin * xs.plane());
          }
        }
        if (need_w) detail::add_into(gw, acc_w);
      });
}

// Transposed convolution (adjoint of conv2d with the same stride/pad).
// x: (N,Cin,H,W); weight: (Cin,Cout,K,K); output spatial size
// (H-1)*stride - 2*pad + K.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride = 1, std::size_t pad = 0) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv_transpose2d: kernel must be square, got " + ws.str());
  if (ws.n != xs.c) throw ShapeError("conv_transpose2d: input " + xs.str() + " vs weight " + ws.str());
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t k = ws.h, cin = xs.c, cout = ws.c;
  if ((xs.h - 1) * stride + k < 2 * pad + 1 || (xs.w - 1) * stride + k < 2 * pad + 1) {
    throw ShapeError("conv_transpose2d: padding exceeds output size");
  }
  const std::size_t ho = (xs.h - 1) * stride + k - 2 * pad;
  const std::size_t wo = (xs.w - 1) * stride + k - 2 * pad;
  if (bias.defined() && bias.shape() != Shape{1, cout, 1, 1}) {
    throw ShapeError("conv_transpose2d: bias " + bias.shape().str());
  }
  const Shape out{xs.n, cout, ho, wo};
  const std::size_t rows = cout * k * k, cols = xs.plane();

  std::vector<T> v(out.numel(), T(0));
  const detail::RowMat<T> wm = detail::owned(weight.values().data(), cin, rows);
  detail::RowMat<T> col(rows, cols), xm(cin, cols);
  for (std::size_t n = 0; n < xs.n; ++n) {
    xm = detail::owned(x.values().data() + n * cin * cols, cin, cols);
    col.noalias() = wm.transpose() * xm;
    T* dst = v.data() + n * cout * ho * wo;
    detail::col2im(col.data(), cout, ho, wo, k, stride, pad, xs.h, xs.w, dst);
    if (bias.defined()) {
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < ho * wo; ++p) dst[o * ho * wo + p] += bias[o];
    }
  }

  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return gasda::detail::emit<T>(
      "conv_transpose2d", out, std::move(v), inputs,
      [x, weight, bias, xs, k, cout, cin, stride, pad, ho, wo, rows, cols](const std::vector<T>& g,
                                                                          const std::vector<T>&) {
        const detail::RowMat<T> wm = detail::owned(weight.values().data(), cin, rows);
        const bool need_x = x.requires_grad(), need_w = weight.requires_grad();
        const bool need_b = bias.defined() && bias.requires_grad();
        T* gb = need_b ? gasda::detail::grad_buffer(bias.data()).data() : nullptr;
        T* gw = need_w ? gasda::detail::grad_buffer(weight.data()).data() : nullptr;
        T* gx = need_x ? gasda::detail::grad_buffer(x.data()).data() : nullptr;
        detail::RowMat<T> col(rows, cols), xm(cin, cols), gxn(cin, cols);
        detail::RowMat<T> acc_w = detail::RowMat<T>::Zero(need_w ? cin : 0, need_w ? rows : 0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const T* gn = g.data() + n * cout * ho * wo;
          if (need_b) {
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t p = 0; p < ho * wo; ++p) gb[o] += gn[o * ho * wo + p];
          }
          if (!need_w && !need_x) continue;
          detail::im2col(gn, cout, ho, wo, k, stride, pad, xs.h, xs.w, col.data());
          if (need_x) {
            gxn.noalias() = wm * col;
            detail::add_into(gx + n * cin * cols, gxn);
          }
          if (need_w) {
            xm = detail::owned(x.values().data() + n * cin * cols, cin, cols);
            acc_w.noalias() += xm * col.transpose();
          }
        }
        if (need_w) detail::add_into(gw, acc_w);
      });
}

// ------------------------------------------------------------- resampling

template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  const Shape s = x.shape();
  if (kernel == 0 || stride == 0) throw ShapeError("avg_pool2d: kernel and stride must be positive");
  if (s.h < kernel || s.w < kernel) throw ShapeError("avg_pool2d: input " + s.str() + " smaller than kernel");
  const std::size_t ho = (s.h - kernel) / stride + 1, wo = (s.w - kernel) / stride + 1;
  const Shape out{s.n, s.c, ho, wo};
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  const auto xv = x.values();
  std::vector<T> v(out.numel());
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = xv.data() + p * s.plane();
    T* dst = v.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T acc = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) acc += src[(oy * stride + ky) * s.w + ox * stride + kx];
        dst[oy * wo + ox] = acc * inv;
      }
  }
  return gasda::detail::emit<T>("avg_pool2d", out, std::move(v), {&x},
                                [x, s, kernel, stride, ho, wo, inv](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  for (std::size_t p = 0; p < s.n * s.c; ++p) {
                                    T* dst = gx.data() + p * s.plane();
                                    const T* src = g.data() + p * ho * wo;
                                    for (std::size_t oy = 0; oy < ho; ++oy)
                                      for (std::size_t ox = 0; ox < wo; ++ox) {
                                        const T gi = src[oy * wo + ox] * inv;
                                        for (std::size_t ky = 0; ky < kernel; ++ky)
                                          for (std::size_t kx = 0; kx < kernel; ++kx)
                                            dst[(oy * stride + ky) * s.w + ox * stride + kx] += gi;
                                      }
                                  }
                                });
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  const Shape s = x.shape();
  const Shape out{s.n, s.c, s.h * factor, s.w * factor};
  const auto xv = x.values();
  std::vector<T> v(out.numel());
  for (std::size_t p = 0; p < s.n * s.c; ++p)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t xx = 0; xx < out.w; ++xx)
        v[(p * out.h + y) * out.w + xx] = xv[(p * s.h + y / factor) * s.w + xx / factor];
  return gasda::detail::emit<T>("upsample_nearest", out, std::move(v), {&x},
                                [x, s, out, factor](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  for (std::size_t p = 0; p < s.n * s.c; ++p)
                                    for (std::size_t y = 0; y < out.h; ++y)
                                      for (std::size_t xx = 0; xx < out.w; ++xx)
                                        gx[(p * s.h + y / factor) * s.w + xx / factor] +=
                                            g[(p * out.h + y) * out.w + xx];
                                });
}

// ------------------------------------------------------------- structural

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  const Shape out{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<T> v(out.numel());
  for (std::size_t n = 0; n < out.n; ++n) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t block = p.shape().c * plane;
      std::copy_n(p.values().data() + n * block, block, v.data() + (n * channels) * plane + offset);
      offset += block;
    }
  }
  return gasda::detail::emit<T>("concat_channels", out, std::move(v), parts,
                                [parts, channels, plane](const std::vector<T>& g, const std::vector<T>&) {
                                  const std::size_t batch = parts.front().shape().n;
                                  for (std::size_t n = 0; n < batch; ++n) {
                                    std::size_t offset = 0;
                                    for (const auto& p : parts) {
                                      const std::size_t block = p.shape().c * plane;
                                      if (p.requires_grad()) {
                                        auto& gp = gasda::detail::grad_buffer(p.data());
                                        const T* src = g.data() + n * channels * plane + offset;
                                        for (std::size_t i = 0; i < block; ++i) gp[n * block + i] += src[i];
                                      }
                                      offset += block;
                                    }
                                  }
                                });
}

// Half-open index ranges per dimension: [begin[d], end[d]).
struct Box {
  std::array<std::size_t, 4> begin{};
  std::array<std::size_t, 4> end{};
};

template <class T>
Tensor<T> slice(const Tensor<T>& x, const Box& box) {
  const Shape s = x.shape();
  const std::array<std::size_t, 4> dims{s.n, s.c, s.h, s.w};
  for (std::size_t d = 0; d < 4; ++d) {
    if (box.begin[d] >= box.end[d] || box.end[d] > dims[d]) {
      throw ShapeError("slice: range [" + std::to_string(box.begin[d]) + "," + std::to_string(box.end[d]) +
                       ") invalid for dim " + std::to_string(d) + " of " + s.str());
    }
  }
  const Shape out{box.end[0] - box.begin[0], box.end[1] - box.begin[1], box.end[2] - box.begin[2],
                  box.end[3] - box.begin[3]};
  auto src_index = [s, box](std::size_t n, std::size_t c, std::size_t y, std::size_t xx) {
    return (((n + box.begin[0]) * s.c + c + box.begin[1]) * s.h + y + box.begin[2]) * s.w + xx + box.begin[3];
  };
  const auto xv = x.values();
  std::vector<T> v(out.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t xx = 0; xx < out.w; ++xx) v[i++] = xv[src_index(n, c, y, xx)];
  return gasda::detail::emit<T>("slice", out, std::move(v), {&x},
                                [x, out, src_index](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  std::size_t i = 0;
                                  for (std::size_t n = 0; n < out.n; ++n)
                                    for (std::size_t c = 0; c < out.c; ++c)
                                      for (std::size_t y = 0; y < out.h; ++y)
                                        for (std::size_t xx = 0; xx < out.w; ++xx) gx[src_index(n, c, y, xx)] += g[i++];
                                });
}

// Spatial crop helper: rows [y0,y1), columns [x0,x1), all batches/channels.
template <class T>
Tensor<T> crop(const Tensor<T>& x, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  const Shape s = x.shape();
  return slice(x, Box{{0, 0, y0, x0}, {s.n, s.c, y1, x1}});
}

// Spatial padding: rows top/bottom, columns left/right.
template <class T>
Tensor<T> pad(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right,
              PadMode mode) {
  const Shape s = x.shape();
  if (mode == PadMode::kReflect && (top >= s.h || bottom >= s.h || left >= s.w || right >= s.w) &&
      (s.h > 1 || s.w > 1)) {
    throw ShapeError("pad: reflect padding must be smaller than the input " + s.str());
  }
  const Shape out{s.n, s.c, s.h + top + bottom, s.w + left + right};
  std::vector<std::ptrdiff_t> rows(out.h), cols(out.w);
  for (std::size_t y = 0; y < out.h; ++y) {
    rows[y] = detail::pad_source_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(top),
                                       static_cast<std::ptrdiff_t>(s.h), mode);
  }
  for (std::size_t xx = 0; xx < out.w; ++xx) {
    cols[xx] = detail::pad_source_index(static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(left),
                                        static_cast<std::ptrdiff_t>(s.w), mode);
  }
  const auto xv = x.values();
  std::vector<T> v(out.numel(), T(0));
  for (std::size_t p = 0; p < s.n * s.c; ++p)
    for (std::size_t y = 0; y < out.h; ++y) {
      if (rows[y] < 0) continue;
      for (std::size_t xx = 0; xx < out.w; ++xx) {
        if (cols[xx] < 0) continue;
        v[(p * out.h + y) * out.w + xx] = xv[(p * s.h + rows[y]) * s.w + cols[xx]];
      }
    }
  return gasda::detail::emit<T>("pad", out, std::move(v), {&x},
                                [x, s, out, rows, cols](const std::vector<T>& g, const std::vector<T>&) {
                                  auto& gx = gasda::detail::grad_buffer(x.data());
                                  for (std::size_t p = 0; p < s.n * s.c; ++p)
                                    for (std::size_t y = 0; y < out.h; ++y) {
                                      if (rows[y] < 0) continue;
                                      for (std::size_t xx = 0; xx < out.w; ++xx) {
                                        if (cols[xx] < 0) continue;
                                        gx[(p * s.h + rows[y]) * s.w + cols[xx]] += g[(p * out.h + y) * out.w + xx];
                                      }
                                    }
                                });
}

// ------------------------------------------------------------ sampling

// Linear interpolation along x: out(n,c,y,x) = image(n,c,y,u) with
// u = coords(n,0,y,x) in pixel units. Coordinates are clamped to [0, W-1]
// (zero coordinate gradient where clamping is active). At integer u the
// interpolation interval is [u-1, u], which makes the value exact and the
// coordinate derivative the left-interval slope.
template <class T>
Tensor<T> sample_x(const Tensor<T>& image, const Tensor<T>& coords) {
  const Shape is = image.shape(), cs = coords.shape();
  if (cs.n != is.n || cs.c != 1 || cs.h != is.h || cs.w != is.w) {
    throw ShapeError("sample_x: coords " + cs.str() + " incompatible with image " + is.str());
  }
  const std::size_t w = is.w, plane = is.plane();
  using Tap = detail::LinearTap<T>;
  std::vector<Tap> taps(cs.numel());
  const auto cv = coords.values();
  for (std::size_t i = 0; i < cv.size(); ++i) taps[i] = detail::linear_tap(cv[i], w);
  const auto iv = image.values();
  std::vector<T> v(is.numel());
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t c = 0; c < is.c; ++c) {
      const T* src = iv.data() + (n * is.c + c) * plane;
      T* dst = v.data() + (n * is.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const Tap& t = taps[n * plane + p];
        const std::size_t row = p / w * w;
        if (w == 1) {
          dst[p] = src[row];
          continue;
        }
        dst[p] = (T(1) - t.frac) * src[row + t.x0] + t.frac * src[row + t.x0 + 1];
      }
    }
  return gasda::detail::emit<T>(
      "sample_x", is, std::move(v), {&image, &coords},
      [image, coords, taps, is, w, plane](const std::vector<T>& g, const std::vector<T>&) {
        const auto iv = image.values();
        T* gi = image.requires_grad() ? gasda::detail::grad_buffer(image.data()).data() : nullptr;
        T* gc = coords.requires_grad() ? gasda::detail::grad_buffer(coords.data()).data() : nullptr;
        for (std::size_t n = 0; n < is.n; ++n)
          for (std::size_t c = 0; c < is.c; ++c) {
            const std::size_t base = (n * is.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const Tap& t = taps[n * plane + p];
              const std::size_t row = p / w * w;
              const T gp = g[base + p];
              if (w == 1) {
                if (gi) gi[base + row] += gp;
                continue;
              }
              if (gi) {
                gi[base + row + t.x0] += gp * (T(1) - t.frac);
                gi[base + row + t.x0 + 1] += gp * t.frac;
              }
              if (gc && !t.clamped) {
                gc[n * plane + p] += gp * (iv[base + row + t.x0 + 1] - iv[base + row + t.x0]);
              }
            }
          }
      });
}

// -------------------------------------------------------------- dispatch

struct Attrs {
  double scalar = 0.0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t kernel = 2;
  std::size_t factor = 2;
  double slope = kLeakySlope;
  PadMode mode = PadMode::kZero;
  std::array<std::size_t, 4> pads{};  // top, bottom, left, right
  Box box{};
};

// Kind names accepted by primitive().
inline const std::vector<std::string_view>& primitive_kinds() {
  static const std::vector<std::string_view> kinds{
      "add",     "subtract",     "multiply",     "divide",       "scalar_multiply", "add_scalar",
      "mean",    "mean_channels", "abs",         "square",       "sqrt",            "log",
      "exp",     "sigmoid",      "tanh",         "leaky_relu",   "conv2d",          "conv_transpose2d",
      "avg_pool2d", "upsample_nearest", "concat_channels", "slice", "pad",          "sample_x"};
  return kinds;
}

// Name-based entry point over the primitive set.
template <class T>
Tensor<T> primitive(std::string_view kind, const std::vector<Tensor<T>>& in, const Attrs& a = {}) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw ShapeError(std::string(kind) + ": expected " + std::to_string(lo) + ".." + std::to_string(hi) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  const T s = static_cast<T>(a.scalar);
  if (kind == "add") return need(2, 2), add(in[0], in[1]);
  if (kind == "subtract") return need(2, 2), sub(in[0], in[1]);
  if (kind == "multiply") return need(2, 2), mul(in[0], in[1]);
  if (kind == "divide") return need(2, 2), div(in[0], in[1]);
  if (kind == "scalar_multiply") return need(1, 1), scale(in[0], s);
  if (kind == "add_scalar") return need(1, 1), add_scalar(in[0], s);
  if (kind == "mean") return need(1, 1), mean(in[0]);
  if (kind == "mean_channels") return need(1, 1), mean_channels(in[0]);
  if (kind == "abs") return need(1, 1), abs(in[0]);
  if (kind == "square") return need(1, 1), square(in[0]);
  if (kind == "sqrt") return need(1, 1), sqrt(in[0]);
  if (kind == "log") return need(1, 1), log(in[0]);
  if (kind == "exp") return need(1, 1), exp(in[0]);
  if (kind == "sigmoid") return need(1, 1), sigmoid(in[0]);
  if (kind == "tanh") return need(1, 1), tanh(in[0]);
  if (kind == "leaky_relu") return need(1, 1), leaky_relu(in[0], static_cast<T>(a.slope));
  if (kind == "conv2d") {
    need(2, 3);
    return conv2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor<T>{}, a.stride, a.pad);
  }
  if (kind == "conv_transpose2d") {
    need(2, 3);
    return conv_transpose2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor<T>{}, a.stride, a.pad);
  }
  if (kind == "avg_pool2d") return need(1, 1), avg_pool2d(in[0], a.kernel, a.stride);
  if (kind == "upsample_nearest") return need(1, 1), upsample_nearest(in[0], a.factor);
  if (kind == "concat_channels") return need(1, 64), concat_channels(in);
  if (kind == "slice") return need(1, 1), slice(in[0], a.box);
  if (kind == "pad") return need(1, 1), pad(in[0], a.pads[0], a.pads[1], a.pads[2], a.pads[3], a.mode);
  if (kind == "sample_x") return need(2, 2), sample_x(in[0], in[1]);
  throw std::invalid_argument("primitive: unknown kind '" + std::string(kind) + "'");
}

}  // namespace gasda::ops

namespace gasda {

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return ops::add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return ops::sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return ops::mul(a, b);
}
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  return ops::div(a, b);
}

}  // namespace gasda
