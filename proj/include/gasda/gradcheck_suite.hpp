#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "gasda/config.hpp"
#include "gasda/geometry.hpp"
#include "gasda/gradcheck.hpp"
#include "gasda/losses.hpp"
#include "gasda/networks.hpp"
#include "gasda/ops.hpp"
#include "gasda/rng.hpp"
#include "gasda/tensor.hpp"
#include "gasda/trainer.hpp"

namespace gasda::gradcheck {

using W = Wide;
using TW = Tensor<W>;

// Points closer than this to a documented kink (abs, leaky_relu at 0) are
// moved out to it before checking.
inline constexpr double kKinkMargin = 1e-3;

// Name of the item whose output gradient is deliberately scaled (test
// fixture for the detection contract); empty in normal runs.
inline std::string& corrupted_item() {
  thread_local std::string name;
  return name;
}

// Identity in the forward pass; scales the incoming gradient by 1.5 when
// `item` is the corrupted one.
inline TW tap(const std::string& item, const TW& x) {
  if (corrupted_item() != item) return x;
  return detail::emit<W>("corrupt", x.shape(), std::vector<W>(x.values().begin(), x.values().end()), {&x},
                         [x](const std::vector<W>& g, const std::vector<W>&) {
                           auto& gx = detail::grad_buffer(x.data());
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += W(1.5) * g[i];
                         });
}

// Sampled arguments for one item; `trial` selects an independent draw.
struct Inputs {
  explicit Inputs(const std::string& name, std::uint64_t trial = 0) : rng(Rng::derive(0x6a5d, name, trial)) {}

  TW uniform(Shape s, double lo, double hi) {
    std::vector<W> v(s.numel());
    for (auto& e : v) e = rng.uniform(lo, hi);
    return TW::from(s, std::move(v));
  }
  // Normal entries pushed out of (-kKinkMargin, kKinkMargin).
  TW normal(Shape s, double stddev = 1.0) {
    std::vector<W> v(s.numel());
    for (auto& e : v) {
      e = rng.normal(0.0, stddev);
      if (std::abs(e) < kKinkMargin) e = e < 0 ? -kKinkMargin : kKinkMargin;
    }
    return TW::from(s, std::move(v));
  }
  // Nonzero magnitudes in [lo, hi] with random sign.
  TW signed_mag(Shape s, double lo, double hi) {
    std::vector<W> v(s.numel());
    for (auto& e : v) e = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return TW::from(s, std::move(v));
  }

  Rng rng;
};

// Reduces any tensor to a scalar with fixed random weights so every output
// element carries a distinct gradient.
inline TW project(const TW& y, Inputs& in) { return ops::mean(ops::mul(y, in.normal(y.shape()))); }

struct ItemResult {
  std::string name;
  GradCheckReport report;
  std::string note;  // failure reason other than tolerance
};

struct Item {
  std::string name;
  std::string group;  // primitive, geometry, loss, network, objective
  // Runs every sub-check of the item and returns the worst one.
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

namespace detail {

inline void merge(GradCheckReport& acc, const GradCheckReport& r, bool first) {
  if (first || r.max_rel_error > acc.max_rel_error) {
    acc.max_rel_error = r.max_rel_error;
    acc.worst_index = r.worst_index;
  }
  acc.checked += r.checked;
  acc.excluded.insert(acc.excluded.end(), r.excluded.begin(), r.excluded.end());
  acc.passed = (first || acc.passed) && r.passed;
}

// Checks `fn(args)` with respect to each argument in `wrt` in turn, the
// others held at their sampled values.
inline GradCheckReport check_args(const std::string& item, const std::vector<TW>& args, const std::vector<std::size_t>& wrt,
                                  const std::function<TW(const std::vector<TW>&)>& fn, const GradCheckOptions& opt) {
  GradCheckReport acc;
  bool first = true;
  for (const std::size_t k : wrt) {
    auto f = [&](const TW& x) {
      std::vector<TW> a = args;
      a[k] = x;
      return tap(item, fn(a));
    };
    merge(acc, grad_check(f, args[k], opt), first);
    first = false;
  }
  return acc;
}

inline std::vector<std::size_t> all_args(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Checks primitive `kind` through the name-based dispatch.
inline Item primitive_item(std::uint64_t trial, const std::string& kind, std::function<std::vector<TW>(Inputs&)> make,
                           ops::Attrs attrs = {}) {
  return {kind, "primitive", [trial, kind, make, attrs](const GradCheckOptions& opt) {
            Inputs in(kind, trial);
            const std::vector<TW> args = make(in);
            Inputs w(kind + ":weights");
            const TW probe = ops::primitive<W>(kind, args, attrs);
            const TW weights = w.normal(probe.shape());
            return check_args(kind, args, all_args(args.size()),
                              [&](const std::vector<TW>& a) {
                                return ops::mean(ops::mul(ops::primitive<W>(kind, a, attrs), weights));
                              },
                              opt);
          }};
}

// Checks an arbitrary function of sampled arguments.
inline Item function_item(std::uint64_t trial, const std::string& name, const std::string& group,
                          std::function<std::vector<TW>(Inputs&)> make,
                          std::function<TW(const std::vector<TW>&, Inputs&)> fn, std::vector<std::size_t> wrt = {}) {
  return {name, group, [trial, name, make, fn, wrt](const GradCheckOptions& opt) {
            Inputs in(name, trial);
            const std::vector<TW> args = make(in);
            const auto which = wrt.empty() ? all_args(args.size()) : wrt;
            return check_args(name, args, which,
                              [&](const std::vector<TW>& a) {
                                Inputs w(name + ":weights");
                                return fn(a, w);
                              },
                              opt);
          }};
}

inline Shape sh(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return Shape{n, c, h, w}; }

// Sampling coordinates strictly between integer columns, inside the image.
inline TW interior_coords(Inputs& in, Shape s, std::size_t width) {
  std::vector<W> v(s.numel());
  for (auto& e : v) e = static_cast<double>(in.rng.below(width - 1)) + in.rng.uniform(0.1, 0.9);
  return TW::from(s, std::move(v));
}

inline RunConfig micro_config() {
  RunConfig c;
  c.mode = TrainMode::kGasda;
  c.world.height = 8;
  c.world.width = 8;
  c.world.rig = geometry::CameraRig{8.0, 0.54, 8};
  c.networks = NetworkConfig{2, 1, 2, 2, 2, 2};
  return c;
}

}  // namespace detail

// The suite. `trial` 0 is the canonical draw used by the command line.
inline std::vector<Item> items(std::uint64_t trial = 0) {
  auto primitive_item = [trial](auto&&... a) { return detail::primitive_item(trial, a...); };
  auto function_item = [trial](auto&&... a) { return detail::function_item(trial, a...); };
  using detail::sh;
  using V = std::vector<TW>;
  std::vector<Item> out;
  const Shape s = sh(2, 3, 4, 5);

  // Primitives.
  out.push_back(primitive_item("add", [s](Inputs& in) { return V{in.normal(s), in.normal(sh(1, 3, 1, 5))}; }));
  out.push_back(primitive_item("subtract", [s](Inputs& in) { return V{in.normal(s), in.normal(sh(2, 1, 4, 1))}; }));
  out.push_back(primitive_item("multiply", [s](Inputs& in) { return V{in.normal(s), in.normal(s)}; }));
  out.push_back(primitive_item("divide", [s](Inputs& in) { return V{in.normal(s), in.signed_mag(s, 0.5, 2.0)}; }));
  {
    ops::Attrs a;
    a.scalar = -1.7;
    out.push_back(primitive_item("scalar_multiply", [s](Inputs& in) { return V{in.normal(s)}; }, a));
    a.scalar = 0.3;
    out.push_back(primitive_item("add_scalar", [s](Inputs& in) { return V{in.normal(s)}; }, a));
  }
  out.push_back(primitive_item("mean", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("mean_channels", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("abs", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("square", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("sqrt", [s](Inputs& in) { return V{in.uniform(s, 0.5, 2.0)}; }));
  out.push_back(primitive_item("log", [s](Inputs& in) { return V{in.uniform(s, 0.5, 2.0)}; }));
  out.push_back(primitive_item("exp", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("sigmoid", [s](Inputs& in) { return V{in.normal(s, 2.0)}; }));
  out.push_back(primitive_item("tanh", [s](Inputs& in) { return V{in.normal(s)}; }));
  out.push_back(primitive_item("leaky_relu", [s](Inputs& in) { return V{in.normal(s)}; }));
  {
    ops::Attrs a;
    a.stride = 2;
    a.pad = 1;
    out.push_back(primitive_item(
        "conv2d",
        [](Inputs& in) { return V{in.normal(sh(2, 3, 6, 7)), in.normal(sh(4, 3, 3, 3), 0.5), in.normal(sh(1, 4, 1, 1))}; },
        a));
    out.push_back(primitive_item(
        "conv_transpose2d",
        [](Inputs& in) { return V{in.normal(sh(1, 3, 3, 4)), in.normal(sh(3, 2, 4, 4), 0.5), in.normal(sh(1, 2, 1, 1))}; },
        a));
  }
  {
    ops::Attrs a;
    a.kernel = 3;
    a.stride = 1;
    out.push_back(primitive_item("avg_pool2d", [](Inputs& in) { return V{in.normal(sh(2, 2, 5, 6))}; }, a));
  }
  {
    ops::Attrs a;
    a.factor = 2;
    out.push_back(primitive_item("upsample_nearest", [](Inputs& in) { return V{in.normal(sh(1, 2, 3, 4))}; }, a));
  }
  out.push_back(primitive_item("concat_channels", [](Inputs& in) {
    return V{in.normal(sh(2, 1, 3, 4)), in.normal(sh(2, 3, 3, 4))};
  }));
  {
    ops::Attrs a;
    a.box = ops::Box{{0, 1, 1, 0}, {2, 3, 4, 3}};
    out.push_back(primitive_item("slice", [s](Inputs& in) { return V{in.normal(s)}; }, a));
  }
  {
    ops::Attrs a;
    a.pads = {1, 0, 2, 1};
    a.mode = ops::PadMode::kReflect;
    out.push_back(primitive_item("pad", [s](Inputs& in) { return V{in.normal(s)}; }, a));
  }
  out.push_back(primitive_item("sample_x", [](Inputs& in) {
    return V{in.normal(sh(2, 3, 4, 6)), detail::interior_coords(in, sh(2, 1, 4, 6), 6)};
  }));

  // Geometry.
  out.push_back(function_item(
      "depth_to_disparity", "geometry", [](Inputs& in) { return V{in.uniform(sh(2, 1, 4, 6), 1.0, 80.0)}; },
      [](const V& a, Inputs& w) { return project(geometry::depth_to_disparity(a[0], geometry::CameraRig{}), w); }));
  out.push_back(function_item(
      "inverse_warp", "geometry",
      [](Inputs& in) {
        std::vector<W> d(2 * 4 * 8);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i % 8) * 0.3 + in.rng.uniform(0.05, 0.25) + 0.1;
        return V{in.uniform(sh(2, 3, 4, 8), 0.0, 1.0), TW::from(sh(2, 1, 4, 8), std::move(d))};
      },
      [](const V& a, Inputs& w) { return project(geometry::inverse_warp(a[0], a[1]), w); }));
  out.push_back(function_item(
      "ssim", "geometry",
      [](Inputs& in) { return V{in.uniform(sh(1, 3, 5, 6), 0.1, 0.9), in.uniform(sh(1, 3, 5, 6), 0.1, 0.9)}; },
      [](const V& a, Inputs& w) { return project(geometry::ssim(a[0], a[1]), w); }));
  out.push_back(function_item(
      "spatial_gradients", "geometry", [](Inputs& in) { return V{in.normal(sh(2, 2, 4, 5))}; },
      [](const V& a, Inputs& w) {
        const auto [dx, dy] = geometry::spatial_gradients(a[0]);
        return ops::add(project(dx, w), project(dy, w));
      }));

  // Loss components.
  using losses::AdversarialForm;
  for (const auto& [form, suffix] : {std::pair{AdversarialForm::kLeastSquares, "lsgan"},
                                     std::pair{AdversarialForm::kLogLikelihood, "loglik"}}) {
    const AdversarialForm f = form;
    out.push_back(function_item(
        std::string("generator_adversarial_loss_") + suffix, "loss", [](Inputs& in) { return V{in.normal(sh(2, 1, 3, 4))}; },
        [f](const V& a, Inputs&) { return losses::generator_adversarial_loss(a[0], f); }));
    out.push_back(function_item(
        std::string("discriminator_adversarial_loss_") + suffix, "loss",
        [](Inputs& in) { return V{in.normal(sh(2, 1, 3, 4)), in.normal(sh(2, 1, 3, 4))}; },
        [f](const V& a, Inputs&) { return losses::discriminator_adversarial_loss(a[0], a[1], f); }));
  }
  const Shape img = sh(2, 3, 4, 6), dep = sh(2, 1, 4, 6);
  out.push_back(function_item(
      "cycle_loss", "loss", [img](Inputs& in) { return V{in.uniform(img, 0, 1), in.uniform(img, 0, 1)}; },
      [](const V& a, Inputs&) { return losses::cycle_loss(a[0], a[1]); }));
  out.push_back(function_item(
      "identity_loss", "loss", [img](Inputs& in) { return V{in.uniform(img, 0, 1), in.uniform(img, 0, 1)}; },
      [](const V& a, Inputs&) { return losses::identity_loss(a[0], a[1]); }));
  out.push_back(function_item(
      "depth_supervised_loss", "loss", [dep](Inputs& in) { return V{in.uniform(dep, 1, 80), in.uniform(dep, 1, 80)}; },
      [](const V& a, Inputs&) { return losses::depth_supervised_loss(a[0], a[1]); }));
  out.push_back(function_item(
      "depth_consistency_loss", "loss", [dep](Inputs& in) { return V{in.uniform(dep, 1, 80), in.uniform(dep, 1, 80)}; },
      [](const V& a, Inputs&) { return losses::depth_consistency_loss(a[0], a[1]); }));
  out.push_back(function_item(
      "photometric_mix", "loss", [img](Inputs& in) { return V{in.uniform(img, -1, 1), in.uniform(img, 0.01, 1)}; },
      [](const V& a, Inputs&) { return losses::photometric_mix(a[0], a[1], 0.85, 0.15); }));
  out.push_back(function_item(
      "geometry_consistency_loss", "loss",
      [img](Inputs& in) { return V{in.uniform(img, 0.1, 0.9), in.uniform(img, 0.1, 0.9)}; },
      [](const V& a, Inputs&) { return losses::geometry_consistency_loss(a[0], a[1], losses::LossWeights{}); }));
  out.push_back(function_item(
      "smoothness_loss", "loss", [dep, img](Inputs& in) { return V{in.uniform(dep, 1, 80), in.uniform(img, 0, 1)}; },
      [](const V& a, Inputs&) { return losses::smoothness_loss(a[0], a[1]); }));
  auto objective_item = [&](const std::string& name, bool full) {
    out.push_back(function_item(
        name, "loss", [](Inputs& in) { return V{in.uniform(sh(1, 1, 1, losses::kNumTerms), 0.1, 2.0)}; },
        [full](const V& a, Inputs&) {
          losses::TermSet<TW> parts;
          for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
            parts.set(static_cast<losses::Term>(i), ops::crop(a[0], 0, 1, i, i + 1));
          }
          const losses::LossWeights w;
          return full ? losses::full_objective(parts, w) : losses::translation_objective(parts, w);
        }));
  };
  objective_item("translation_objective", false);
  objective_item("full_objective", true);

  // Networks, with respect to their input image.
  const Shape net_in = sh(2, 3, 8, 8);
  out.push_back(function_item(
      "generator", "network", [net_in](Inputs& in) { return V{in.uniform(net_in, 0, 1)}; },
      [](const V& a, Inputs& w) {
        const auto g = nets::build_generator<W>("G", nets::generator_arch(2, 1), 7);
        return project(nets::translate(g, a[0]), w);
      }));
  out.push_back(function_item(
      "discriminator", "network", [net_in](Inputs& in) { return V{in.uniform(net_in, 0, 1)}; },
      [](const V& a, Inputs& w) {
        const auto d = nets::build_discriminator<W>("D", nets::discriminator_arch(2, 2), 7);
        return project(nets::run_discriminator(d, a[0]), w);
      }));
  out.push_back(function_item(
      "depth_net", "network", [net_in](Inputs& in) { return V{in.uniform(net_in, 0, 1)}; },
      [](const V& a, Inputs& w) {
        const auto f = nets::build_depth_net<W>("F", nets::depth_arch(2, 2), 7);
        const auto outs = nets::run_depth_net(f, a[0]);
        TW acc = project(outs[0], w);
        for (std::size_t k = 1; k < outs.size(); ++k) acc = ops::add(acc, project(outs[k], w));
        return acc;
      }));

  // Every term of the training objective through the networks on a
  // two-sample micro-batch, with respect to the source and target images.
  out.push_back(function_item(
      "training_objective", "objective",
      [](Inputs& in) {
        return V{in.uniform(sh(2, 3, 8, 8), 0.05, 0.95), in.uniform(sh(2, 1, 8, 8), 2.0, 60.0),
                 in.uniform(sh(2, 3, 8, 8), 0.05, 0.95), in.uniform(sh(2, 3, 8, 8), 0.05, 0.95)};
      },
      [](const V& a, Inputs&) {
        const RunConfig cfg = detail::micro_config();
        const auto models = train::build_models<W>(cfg);
        const train::BasicBatch<W> b{a[0], a[1], a[2], a[3]};
        const auto& spec = mode_spec(cfg.mode);
        std::array<bool, losses::kNumTerms> on{};
        on.fill(true);
        const auto st = train::compute_terms(models, b, spec, on, true, cfg);
        return losses::full_objective(st.parts, cfg.weights);
      },
      std::vector<std::size_t>{0, 2, 3}));
  return out;
}

inline std::vector<std::string> item_names() {
  std::vector<std::string> names;
  for (const auto& i : items()) names.push_back(i.name);
  return names;
}

// Runs the items whose name equals `only` (all when empty), printing one line
// per item. Returns the results in suite order.
inline std::vector<ItemResult> run_suite(const std::string& only, const GradCheckOptions& opt, std::ostream& log) {
  std::vector<ItemResult> results;
  for (const auto& item : items()) {
    if (!only.empty() && item.name != only) continue;
    ItemResult r{item.name, {}, {}};
    try {
      r.report = item.run(opt);
    } catch (const std::exception& e) {
      r.report.passed = false;
      r.note = e.what();
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-36s max_rel_err=%.3e checked=%zu excluded=%zu %s", item.name.c_str(),
                  r.report.max_rel_error, r.report.checked, r.report.excluded.size(), r.report.passed ? "PASS" : "FAIL");
    log << buf;
    if (!r.note.empty()) log << " (" << r.note << ")";
    log << "\n";
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace gasda::gradcheck
