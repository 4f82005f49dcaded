#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/ops.hpp"
#include "gasda/rng.hpp"
#include "gasda/tensor.hpp"

namespace gasda::world {

// Photometric camera model separating the target domain from the source.
// y = clip01(((x*k + (1-k)/2) * gain * cast_c + bias) * (1 - vignette*r^2) + noise)
// with k = contrast and r^2 = 1 at the image corners.
struct DomainShift {
  double gain = 0.8;
  double bias = 0.05;
  double contrast = 1.3;
  std::array<double, 3> cast{1.15, 1.0, 0.8};
  double noise_std = 0.01;
  double vignette = 0.3;

  static DomainShift identity() { return {1.0, 0.0, 1.0, {1.0, 1.0, 1.0}, 0.0, 0.0}; }

  void validate() const {
    if (!(gain >= 0.0) || !(contrast >= 0.0) || !(noise_std >= 0.0) || !(vignette >= 0.0 && vignette <= 1.0)) {
      throw ConfigError("domain shift: gain, contrast, noise_std must be >= 0 and vignette in [0,1]");
    }
    for (const double c : cast) {
      if (!(c >= 0.0)) throw ConfigError("domain shift: color cast must be >= 0");
    }
    if (!std::isfinite(bias)) throw ConfigError("domain shift: bias must be finite");
  }
};

struct WorldConfig {
  std::size_t height = 32;
  std::size_t width = 96;
  std::size_t layers = 4;          // textured rectangles per scene
  double depth_min = geometry::kDepthMin;
  double depth_max = geometry::kDepthMax;
  double object_near = 8.0;        // rectangle depth range, meters
  double object_far = 50.0;
  double camera_height = 1.65;     // meters above the ground plane
  double horizon = 0.35;           // horizon row as a fraction of height
  double haze_distance = 35.0;     // meters; contrast falls as exp(-z/haze_distance)
  geometry::CameraRig rig{};
  DomainShift shift{};
  std::uint64_t seed = 0;

  void validate() const {
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
      throw ConfigError("world: height and width must be positive multiples of 8");
    }
    rig.validate();
    if (rig.width_px != width) throw ConfigError("world: rig.width_px must equal width");
    if (!(depth_min >= geometry::kDepthMin && depth_max <= geometry::kDepthMax && depth_min < depth_max)) {
      throw ConfigError("world: depth range must satisfy 1 <= depth_min < depth_max <= 80");
    }
    if (!(object_near >= depth_min && object_far <= depth_max && object_near < object_far)) {
      throw ConfigError("world: object depth range must lie inside the depth range");
    }
    if (!(camera_height > 0.0) || !(horizon >= 0.0 && horizon < 1.0) || !(haze_distance > 0.0)) {
      throw ConfigError("world: camera_height, haze_distance must be > 0 and horizon in [0,1)");
    }
    shift.validate();
  }
};

enum class Domain { kSource, kTarget };

inline const char* domain_name(Domain d) { return d == Domain::kSource ? "source" : "target"; }

// One training example. Source samples carry gt_depth; target samples carry
// right. Undefined tensors mark absent fields.
template <class T>
struct StereoSample {
  Tensor<T> left;
  Tensor<T> right;
  Tensor<T> gt_depth;
  Domain domain = Domain::kSource;
  geometry::CameraRig rig{};
  std::string id;
};

template <class T>
struct RenderedScene {
  StereoSample<T> sample;
  Tensor<T> occlusion;  // (1,1,H,W); 1 where the true-depth warp cannot reproduce the left view
};

inline std::string sample_id(Domain d, std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06llu", d == Domain::kSource ? 's' : 't', static_cast<unsigned long long>(index));
  return buf;
}

namespace detail {

inline double hash_unit(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = Rng::mix(Rng::mix(a ^ (b * 0x9E3779B97F4A7C15ULL)) + c * 0xD1B54A32D192ED03ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct Rect {
  double z = 0.0;
  double a = 0.0, b = 0.0;          // right-image column extent [a, b]
  double top = 0.0, bottom = 0.0;   // row extent, compared against row centers
  double width_m = 0.0;
  std::array<double, 3> color{};
  std::array<double, 3> window{};
  double win_period_x = 1.0, win_period_y = 1.2;
};

struct Scene {
  std::vector<Rect> rects;  // nearest first
  std::array<double, 3> sky_top{}, sky_bottom{}, ground{};
  std::array<double, 3> haze{0.75, 0.78, 0.82};
  double light = 1.0;
};

inline Scene sample_scene(const WorldConfig& cfg, std::uint64_t index) {
  Rng rng(Rng::derive(cfg.seed, "scene", index));
  Scene s;
  const double f = cfg.rig.focal_px, vh = cfg.horizon * static_cast<double>(cfg.height);
  s.light = rng.uniform(0.8, 1.1);
  const double sky = rng.uniform(0.0, 1.0);
  s.sky_top = {0.35 + 0.2 * sky, 0.5 + 0.15 * sky, 0.85};
  s.sky_bottom = {0.75, 0.8, 0.88};
  const double g = rng.uniform(0.3, 0.5);
  s.ground = {g, g * rng.uniform(0.9, 1.05), g * rng.uniform(0.85, 1.0)};

  const double lz0 = std::log(cfg.object_near), lz1 = std::log(cfg.object_far);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    Rect r;
    r.z = std::exp(rng.uniform(lz0, lz1));
    r.width_m = rng.uniform(1.5, 5.0);
    const double height_m = rng.uniform(1.5, 4.5);
    const double center = rng.uniform(0.0, static_cast<double>(cfg.width - 1));
    const double half = 0.5 * f * r.width_m / r.z;
    r.a = center - half;
    r.b = center + half;
    r.bottom = vh + f * cfg.camera_height / r.z;
    r.top = r.bottom - f * height_m / r.z;
    const double hue = rng.uniform(0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      r.color[c] = 0.35 + 0.45 * (0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (hue + static_cast<double>(c) / 3.0)));
      r.window[c] = 0.15 + 0.1 * static_cast<double>(c) / 2.0;
    }
    r.win_period_x = rng.uniform(0.8, 1.4);
    r.win_period_y = rng.uniform(1.0, 1.6);
    s.rects.push_back(r);
  }
  std::sort(s.rects.begin(), s.rects.end(), [](const Rect& p, const Rect& q) { return p.z < q.z; });
  return s;
}

inline double background_depth(const WorldConfig& cfg, double row_center) {
  const double vh = cfg.horizon * static_cast<double>(cfg.height);
  if (row_center <= vh) return cfg.depth_max;
  return std::clamp(cfg.rig.focal_px * cfg.camera_height / (row_center - vh), cfg.depth_min, cfg.depth_max);
}

inline bool covers_row(const Rect& r, double row_center) { return row_center >= r.top && row_center < r.bottom; }

}  // namespace detail

// Renders the scene for `index` as a rectified stereo pair with the left
// view as reference. Each layer (the background, then each rectangle) has a
// texture defined at integer right-image columns. The right view shows the
// nearest layer at each integer column; the left view at column x shows the
// nearest layer whose footprint contains u = x - f*B/z, interpolated from
// that layer's texture with the same tap rule as geometry::inverse_warp.
template <class T>
RenderedScene<T> render_scene(const WorldConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const detail::Scene scene = detail::sample_scene(cfg, index);
  const std::size_t H = cfg.height, W = cfg.width, plane = H * W, nl = scene.rects.size() + 1;
  const double f = cfg.rig.focal_px, fb = cfg.rig.focal_baseline();
  const double vh = cfg.horizon * static_cast<double>(H), cx = 0.5 * static_cast<double>(W - 1);
  const double hz = cfg.haze_distance;

  // Layer 0 is the background; layer i+1 is rects[i].
  std::vector<double> tex(nl * 3 * plane, 0.0);
  auto tex_at = [&](std::size_t layer, std::size_t c, std::size_t y, std::size_t x) -> double& {
    return tex[((layer * 3 + c) * H + y) * W + x];
  };
  auto hazed = [&](double v, std::size_t c, double z) {
    const double a = std::exp(-z / hz);
    return std::clamp(scene.light * (v * a + scene.haze[c] * (1.0 - a)), 0.0, 1.0);
  };
  for (std::size_t y = 0; y < H; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    const double zb = detail::background_depth(cfg, yc);
    for (std::size_t x = 0; x < W; ++x) {
      const double n = 0.03 * (detail::hash_unit(cfg.seed ^ index, 0, y * W + x) - 0.5);
      if (yc <= vh) {
        const double t = vh > 0.0 ? yc / vh : 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          tex_at(0, c, y, x) = std::clamp(scene.light * ((1.0 - t) * scene.sky_top[c] + t * scene.sky_bottom[c]) + n, 0.0, 1.0);
        }
      } else {
        const double X = (static_cast<double>(x) - cx) * zb / f;
        const double lane = std::abs(std::remainder(X, 3.5)) < 0.15 ? 0.35 : 0.0;
        const double check = (static_cast<long>(std::floor(X)) + static_cast<long>(std::floor(zb / 2.0))) % 2 == 0 ? 0.04 : -0.04;
        for (std::size_t c = 0; c < 3; ++c) tex_at(0, c, y, x) = hazed(scene.ground[c] + lane + check + n, c, zb);
      }
      for (std::size_t i = 0; i < scene.rects.size(); ++i) {
        const detail::Rect& r = scene.rects[i];
        const double xl = (static_cast<double>(x) - r.a) * r.z / f;  // meters from the left edge
        const double yl = (r.bottom - yc) * r.z / f;                 // meters above the ground
        const double px = std::fmod(std::abs(xl), r.win_period_x) / r.win_period_x;
        const double py = std::fmod(std::abs(yl), r.win_period_y) / r.win_period_y;
        const bool window = px > 0.3 && px < 0.7 && py > 0.35 && py < 0.8;
        const bool edge = xl < 0.12 || xl > r.width_m - 0.12;
        const double n2 = 0.04 * (detail::hash_unit(cfg.seed ^ index, i + 1, y * W + x) - 0.5);
        for (std::size_t c = 0; c < 3; ++c) {
          const double base = window ? r.window[c] : r.color[c] * (edge ? 0.6 : 1.0);
          tex_at(i + 1, c, y, x) = hazed(base + n2, c, r.z);
        }
      }
    }
  }

  std::vector<double> right(3 * plane), left(3 * plane), depth(plane), occl(plane, 0.0);
  std::vector<std::size_t> vis_right(plane, 0);
  for (std::size_t y = 0; y < H; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t layer = 0;
      for (std::size_t i = 0; i < scene.rects.size(); ++i) {
        const detail::Rect& r = scene.rects[i];
        const double xd = static_cast<double>(x);
        if (detail::covers_row(r, yc) && xd >= r.a && xd <= r.b) {
          layer = i + 1;
          break;
        }
      }
      vis_right[y * W + x] = layer;
      for (std::size_t c = 0; c < 3; ++c) right[c * plane + y * W + x] = tex_at(layer, c, y, x);
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    const double zb = detail::background_depth(cfg, yc);
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t layer = 0;
      double z = zb;
      for (std::size_t i = 0; i < scene.rects.size(); ++i) {
        const detail::Rect& r = scene.rects[i];
        const double u = static_cast<double>(x) - fb / r.z;
        if (detail::covers_row(r, yc) && u >= r.a && u <= r.b) {
          layer = i + 1;
          z = r.z;
          break;
        }
      }
      // Same arithmetic as depth_to_disparity followed by inverse_warp.
      const double u = static_cast<double>(x) - fb / z;
      const auto tap = ops::detail::linear_tap(u, W);
      const std::size_t p = y * W + x;
      depth[p] = z;
      for (std::size_t c = 0; c < 3; ++c) {
        left[c * plane + p] = (1.0 - tap.frac) * tex_at(layer, c, y, tap.x0) + tap.frac * tex_at(layer, c, y, tap.x0 + 1);
      }
      bool bad = tap.clamped;
      if (tap.frac != 1.0 && vis_right[y * W + tap.x0] != layer) bad = true;
      if (tap.frac != 0.0 && vis_right[y * W + tap.x0 + 1] != layer) bad = true;
      occl[p] = bad ? 1.0 : 0.0;
    }
  }

  auto to_tensor = [](Shape s, const std::vector<double>& v) {
    return Tensor<T>::from(s, std::vector<T>(v.begin(), v.end()));
  };
  RenderedScene<T> out;
  out.sample.left = to_tensor(Shape{1, 3, H, W}, left);
  out.sample.right = to_tensor(Shape{1, 3, H, W}, right);
  out.sample.gt_depth = to_tensor(Shape{1, 1, H, W}, depth);
  out.sample.domain = Domain::kSource;
  out.sample.rig = cfg.rig;
  out.sample.id = sample_id(Domain::kSource, index);
  out.occlusion = to_tensor(Shape{1, 1, H, W}, occl);
  return out;
}

// Source-domain sample for `index`: left, right and exact left-view depth.
template <class T>
StereoSample<T> generate_scene(const WorldConfig& cfg, std::uint64_t index) {
  return render_scene<T>(cfg, index).sample;
}

// Applies cfg.shift identically to left and right (one shared noise field
// keyed by the sample id), drops gt_depth and tags the sample as target.
template <class T>
StereoSample<T> shift_domain(const StereoSample<T>& s, const WorldConfig& cfg) {
  const DomainShift& d = cfg.shift;
  d.validate();
  const Shape sh = s.left.shape();
  if (sh.c != 3) throw ShapeError("shift_domain: expected 3-channel images, got " + sh.str());
  const std::size_t H = sh.h, W = sh.w, plane = H * W;
  std::vector<double> noise(3 * plane, 0.0);
  if (d.noise_std > 0.0) {
    Rng rng(Rng::derive(cfg.seed, "noise:" + s.id));
    for (double& v : noise) v = rng.normal(0.0, d.noise_std);
  }
  const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
  auto apply = [&](const Tensor<T>& img) {
    if (!img.defined()) return img;
    if (img.shape() != sh) throw ShapeError("shift_domain: left/right shape mismatch");
    std::vector<T> v(img.numel());
    const auto src = img.values();
    for (std::size_t n = 0; n < sh.n; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double ry = cy > 0.0 ? (static_cast<double>(y) - cy) / cy : 0.0;
            const double rx = cx > 0.0 ? (static_cast<double>(x) - cx) / cx : 0.0;
            const double vig = 1.0 - d.vignette * 0.5 * (rx * rx + ry * ry);
            const std::size_t i = ((n * 3 + c) * H + y) * W + x;
            const double in = static_cast<double>(src[i]);
            const double k = d.contrast;
            const double out = ((in * k + 0.5 * (1.0 - k)) * d.gain * d.cast[c] + d.bias) * vig + noise[c * plane + y * W + x];
            v[i] = static_cast<T>(std::clamp(out, 0.0, 1.0));
          }
    return Tensor<T>::from(sh, std::move(v));
  };
  StereoSample<T> out = s;
  out.left = apply(s.left);
  out.right = apply(s.right);
  out.gt_depth = Tensor<T>{};
  out.domain = Domain::kTarget;
  return out;
}

// ---------------------------------------------------------- augmentation

struct AugmentConfig {
  double flip_prob = 0.5;
  double max_rotation_deg = 5.0;
  double gain_min = 0.9;
  double gain_max = 1.1;
};

namespace detail {

template <class T>
Tensor<T> mirror(const Tensor<T>& t) {
  if (!t.defined()) return t;
  const Shape s = t.shape();
  std::vector<T> v(t.numel());
  const auto src = t.values();
  for (std::size_t r = 0; r < s.n * s.c * s.h; ++r)
    for (std::size_t x = 0; x < s.w; ++x) v[r * s.w + x] = src[r * s.w + (s.w - 1 - x)];
  return Tensor<T>::from(s, std::move(v));
}

// Rotation by `deg` about the image center; bilinear (images) or nearest
// (depth) lookup with replicated borders.
template <class T>
Tensor<T> rotate(const Tensor<T>& t, double deg, bool nearest) {
  if (!t.defined() || deg == 0.0) return t;
  const Shape s = t.shape();
  const double th = deg * std::numbers::pi / 180.0, cs = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * static_cast<double>(s.h - 1), cx = 0.5 * static_cast<double>(s.w - 1);
  const double ymax = static_cast<double>(s.h - 1), xmax = static_cast<double>(s.w - 1);
  std::vector<T> v(t.numel());
  const auto src = t.values();
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = std::clamp(cx + cs * dx + sn * dy, 0.0, xmax);
      const double sy = std::clamp(cy - sn * dx + cs * dy, 0.0, ymax);
      for (std::size_t r = 0; r < s.n * s.c; ++r) {
        const T* plane = src.data() + r * s.plane();
        double val;
        if (nearest) {
          val = plane[static_cast<std::size_t>(std::lround(sy)) * s.w + static_cast<std::size_t>(std::lround(sx))];
        } else {
          const std::size_t x0 = std::min(static_cast<std::size_t>(sx), s.w > 1 ? s.w - 2 : 0);
          const std::size_t y0 = std::min(static_cast<std::size_t>(sy), s.h > 1 ? s.h - 2 : 0);
          const std::size_t x1 = std::min(x0 + 1, s.w - 1), y1 = std::min(y0 + 1, s.h - 1);
          const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
          val = (1 - fy) * ((1 - fx) * plane[y0 * s.w + x0] + fx * plane[y0 * s.w + x1]) +
                fy * ((1 - fx) * plane[y1 * s.w + x0] + fx * plane[y1 * s.w + x1]);
        }
        v[r * s.plane() + y * s.w + x] = static_cast<T>(val);
      }
    }
  return Tensor<T>::from(s, std::move(v));
}

template <class T>
Tensor<T> brighten(const Tensor<T>& t, double gain) {
  if (!t.defined() || gain == 1.0) return t;
  std::vector<T> v(t.numel());
  const auto src = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(std::clamp(static_cast<double>(src[i]) * gain, 0.0, 1.0));
  return Tensor<T>::from(t.shape(), std::move(v));
}

}  // namespace detail

// Horizontal flip and the individual steps of augment(), exposed for tests.
// Flipping a stereo pair (right present, no labels) swaps the views and
// mirrors both so the left view stays the reference. A labeled sample has
// no right-view depth, so its views and depth are mirrored in place.
template <class T>
StereoSample<T> flip(const StereoSample<T>& s) {
  StereoSample<T> out = s;
  if (s.right.defined() && !s.gt_depth.defined()) {
    out.left = detail::mirror(s.right);
    out.right = detail::mirror(s.left);
  } else {
    out.left = detail::mirror(s.left);
    out.right = detail::mirror(s.right);
    out.gt_depth = detail::mirror(s.gt_depth);
  }
  return out;
}

struct AugmentDraw {
  bool flip = false;
  double rotation_deg = 0.0;
  double gain = 1.0;
};

inline AugmentDraw draw_augment(std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(seed);
  AugmentDraw d;
  d.flip = rng.uniform() < cfg.flip_prob;
  d.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  d.gain = rng.uniform(cfg.gain_min, cfg.gain_max);
  return d;
}

template <class T>
StereoSample<T> apply_augment(const StereoSample<T>& s, const AugmentDraw& d) {
  StereoSample<T> out = d.flip ? flip(s) : s;
  out.left = detail::brighten(detail::rotate(out.left, d.rotation_deg, false), d.gain);
  out.right = detail::brighten(detail::rotate(out.right, d.rotation_deg, false), d.gain);
  out.gt_depth = detail::rotate(out.gt_depth, d.rotation_deg, true);
  return out;
}

// Random flip, rotation in [-5, 5] degrees and brightness gain in [0.9, 1.1],
// all drawn from `seed`.
template <class T>
StereoSample<T> augment(const StereoSample<T>& s, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  return apply_augment(s, draw_augment(seed, cfg));
}

}  // namespace gasda::world
