#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gasda/error.hpp"
#include "gasda/ops.hpp"
#include "gasda/tensor.hpp"

namespace gasda::geometry {

// Valid metric depth range of the synthetic world (and the evaluation cap).
inline constexpr double kDepthMin = 1.0;
inline constexpr double kDepthMax = 80.0;

// Rectified stereo pair intrinsics. Disparity in pixels = focal * baseline / depth.
struct CameraRig {
  double focal_px = 56.0;
  double baseline_m = 0.54;
  std::size_t width_px = 96;

  void validate() const {
    if (!(focal_px > 0.0)) throw ConfigError("rig: focal_px must be > 0");
    if (!(baseline_m > 0.0)) throw ConfigError("rig: baseline_m must be > 0");
    if (width_px == 0) throw ConfigError("rig: width_px must be > 0");
  }

  double focal_baseline() const { return focal_px * baseline_m; }

  // Same rig observed at `factor` times the resolution (side-output scales).
  CameraRig scaled(double factor) const {
    return {focal_px * factor, baseline_m, static_cast<std::size_t>(static_cast<double>(width_px) * factor)};
  }
};

template <class T>
Tensor<T> depth_to_disparity(const Tensor<T>& depth, const CameraRig& rig) {
  rig.validate();
  if (depth.shape().c != 1) throw ShapeError("depth_to_disparity: depth must have one channel, got " + depth.shape().str());
  for (const T z : depth.values()) {
    if (!(z > T(0))) throw NumericError("depth_to_disparity: nonpositive depth element");
  }
  return ops::div(Tensor<T>::scalar(static_cast<T>(rig.focal_baseline())), depth);
}

template <class T>
Tensor<T> disparity_to_depth(const Tensor<T>& disparity, const CameraRig& rig) {
  rig.validate();
  for (const T d : disparity.values()) {
    if (!(d > T(0))) throw NumericError("disparity_to_depth: nonpositive disparity element");
  }
  return ops::div(Tensor<T>::scalar(static_cast<T>(rig.focal_baseline())), disparity);
}

// Constant (N,1,H,W) tensor holding each pixel's column index.
template <class T>
Tensor<T> column_grid(std::size_t n, std::size_t h, std::size_t w) {
  std::vector<T> v(n * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(i % w);
  return Tensor<T>::from(Shape{n, 1, h, w}, std::move(v));
}

// Reconstructs the left view by sampling `right` at (y, x - disparity(y,x)),
// bilinear along the epipolar line with border clamping.
template <class T>
Tensor<T> inverse_warp(const Tensor<T>& right, const Tensor<T>& disparity) {
  const Shape rs = right.shape(), ds = disparity.shape();
  if (ds.n != rs.n || ds.c != 1 || ds.h != rs.h || ds.w != rs.w) {
    throw ShapeError("inverse_warp: disparity " + ds.str() + " vs image " + rs.str());
  }
  const Tensor<T> coords = ops::sub(column_grid<T>(rs.n, rs.h, rs.w), disparity);
  return ops::sample_x(right, coords);
}

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Slack of a few ulps admits convex combinations of [0,1] values (warps,
// pooling) whose rounding lands just past a bound.
template <class T>
void require_unit_range(const Tensor<T>& t, const char* what) {
  const T slack = T(16) * std::numeric_limits<T>::epsilon();
  for (const T v : t.values()) {
    if (!(v >= -slack && v <= T(1) + slack)) throw NumericError(std::string(what) + ": element outside [0,1]");
  }
}

// Per-pixel single-scale SSIM from 3x3 local statistics (reflection padded).
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: " + a.shape().str() + " vs " + b.shape().str());
  require_unit_range(a, "ssim");
  require_unit_range(b, "ssim");
  using ops::PadMode;
  auto pool = [](const Tensor<T>& t) { return ops::avg_pool2d(ops::pad(t, 1, 1, 1, 1, PadMode::kReflect), 3, 1); };
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);

  const Tensor<T> mu_a = pool(a), mu_b = pool(b);
  const Tensor<T> mu_a2 = ops::square(mu_a), mu_b2 = ops::square(mu_b), mu_ab = ops::mul(mu_a, mu_b);
  const Tensor<T> var_a = ops::sub(pool(ops::square(a)), mu_a2);
  const Tensor<T> var_b = ops::sub(pool(ops::square(b)), mu_b2);
  const Tensor<T> cov = ops::sub(pool(ops::mul(a, b)), mu_ab);

  const Tensor<T> num = ops::mul(ops::add_scalar(ops::scale(mu_ab, T(2)), c1), ops::add_scalar(ops::scale(cov, T(2)), c2));
  const Tensor<T> den = ops::mul(ops::add_scalar(ops::add(mu_a2, mu_b2), c1), ops::add_scalar(ops::add(var_a, var_b), c2));
  return ops::div(num, den);
}

// Forward differences along x and y; the last column (row) is zero so both
// maps keep the input shape.
template <class T>
std::pair<Tensor<T>, Tensor<T>> spatial_gradients(const Tensor<T>& img) {
  const Shape s = img.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("spatial_gradients: need H,W >= 2, got " + s.str());
  using ops::PadMode;
  const Tensor<T> dx = ops::sub(ops::crop(img, 0, s.h, 1, s.w), ops::crop(img, 0, s.h, 0, s.w - 1));
  const Tensor<T> dy = ops::sub(ops::crop(img, 1, s.h, 0, s.w), ops::crop(img, 0, s.h - 1, 0, s.w));
  return {ops::pad(dx, 0, 0, 0, 1, PadMode::kZero), ops::pad(dy, 0, 1, 0, 0, PadMode::kZero)};
}

}  // namespace gasda::geometry
