#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gasda/config.hpp"
#include "gasda/corpus.hpp"
#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/networks.hpp"
#include "gasda/ops.hpp"
#include "gasda/tensor.hpp"
#include "gasda/trainer.hpp"

namespace gasda::eval {

using T = Standard;
using Params = nets::ParamSet<T>;

struct MetricReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double a1 = 0, a2 = 0, a3 = 0;
  double cap = 0;
  std::size_t pixels = 0;
};

// Per-pixel sums over any number of (prediction, ground truth) pairs.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(double cap) : cap_(cap) {
    if (!(cap > geometry::kDepthMin)) throw ConfigError("metrics: cap must exceed the minimum depth");
  }

  template <class U>
  void add(const Tensor<U>& pred, const Tensor<U>& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("compute_metrics: " + pred.shape().str() + " vs " + gt.shape().str());
    for (std::size_t i = 0; i < gt.numel(); ++i) {
      const double y = static_cast<double>(gt[i]);
      if (!(y > 0.0 && y < cap_)) continue;
      const double p = std::clamp(static_cast<double>(pred[i]), geometry::kDepthMin, cap_);
      const double d = y - p;
      abs_rel_ += std::abs(d) / y;
      sq_rel_ += d * d / y;
      sq_ += d * d;
      const double l = std::log(y) - std::log(p);
      sq_log_ += l * l;
      const double ratio = std::max(y / p, p / y);
      a1_ += ratio < 1.25 ? 1 : 0;
      a2_ += ratio < 1.25 * 1.25 ? 1 : 0;
      a3_ += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
      ++n_;
    }
  }

  MetricReport finish() const {
    if (n_ == 0) throw DataError("compute_metrics: no valid ground-truth pixels under the cap");
    const double n = static_cast<double>(n_);
    return {abs_rel_ / n, sq_rel_ / n, std::sqrt(sq_ / n), std::sqrt(sq_log_ / n), a1_ / n, a2_ / n, a3_ / n, cap_, n_};
  }

 private:
  double cap_;
  double abs_rel_ = 0, sq_rel_ = 0, sq_ = 0, sq_log_ = 0, a1_ = 0, a2_ = 0, a3_ = 0;
  std::size_t n_ = 0;
};

template <class U>
MetricReport compute_metrics(const Tensor<U>& pred, const Tensor<U>& gt, double cap) {
  MetricAccumulator acc(cap);
  acc.add(pred, gt);
  return acc.finish();
}

// --------------------------------------------------------------- infer

// Networks for inference. Null pointers mark absent networks; a null G_t2s
// feeds the target image to F_s directly.
struct InferenceNets {
  const Params* f_t = nullptr;
  const Params* f_s = nullptr;
  const Params* g_t2s = nullptr;
};

inline InferenceNets inference_nets(const train::Models& m) {
  return {m.has_ft() ? &m.f_t : nullptr, m.has_fs() ? &m.f_s : nullptr, m.has_translators() ? &m.g_t2s : nullptr};
}

inline const char* path_name(InferencePath p) {
  switch (p) {
    case InferencePath::kFt:
      return "ft";
    case InferencePath::kFs:
      return "fs";
    case InferencePath::kAverage:
      return "avg";
  }
  return "";
}

inline InferencePath parse_path(const std::string& s) {
  if (s == "ft") return InferencePath::kFt;
  if (s == "fs") return InferencePath::kFs;
  if (s == "avg") return InferencePath::kAverage;
  throw ConfigError("unknown inference path '" + s + "' (valid: avg, ft, fs)");
}

// Elementwise mean of two depth maps.
inline Tensor<T> average_depth(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("average_depth: " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (a[i] + b[i]) / T(2);
  return Tensor<T>::from(a.shape(), std::move(v));
}

// Full-resolution depth for target images `x` (N,3,H,W) along `path`.
inline Tensor<T> infer(const InferenceNets& nets, const Tensor<T>& x, InferencePath path) {
  NoGradGuard no_grad;
  auto ft = [&] {
    if (nets.f_t == nullptr) throw DataError("infer: path needs F_t, which this run did not train");
    return nets::run_depth_net(*nets.f_t, x).front();
  };
  auto fs = [&] {
    if (nets.f_s == nullptr) throw DataError("infer: path needs F_s, which this run did not train");
    const Tensor<T> in = nets.g_t2s != nullptr ? nets::translate(*nets.g_t2s, x) : x;
    return nets::run_depth_net(*nets.f_s, in).front();
  };
  switch (path) {
    case InferencePath::kFt:
      return ft();
    case InferencePath::kFs:
      return fs();
    case InferencePath::kAverage:
      return average_depth(ft(), fs());
  }
  return {};
}

// ------------------------------------------------------- ablation report

struct ReportRow {
  std::string mode;
  double cap = 0;
  std::optional<MetricReport> metrics;
  std::string error;  // set when metrics is empty
};

// Row labels in the ablation table's order, grouped as domain adaptation,
// geometry consistency and symmetric domain adaptation.
inline const std::vector<std::string>& report_order() {
  static const std::vector<std::string> order{
      "SYN",    "SYN2REAL",    "SYN2REAL_E2E", "REAL",     "SYN_GC",  "SYN2REAL_GC", "SYN2REAL_GC_E2E",
      "REAL2SYN_SYN_GC_E2E", "GASDA_WO_DC", "GASDA_Ft", "GASDA_Fs", "GASDA"};
  return order;
}

inline std::size_t report_rank(const std::string& label) {
  const auto& o = report_order();
  return static_cast<std::size_t>(std::find(o.begin(), o.end(), label) - o.begin());
}

// Rows (label, path) a run of `mode` contributes to the table.
inline std::vector<std::pair<std::string, InferencePath>> report_paths(TrainMode mode) {
  const ModeSpec& spec = mode_spec(mode);
  if (mode == TrainMode::kGasda) {
    return {{"GASDA_Ft", InferencePath::kFt}, {"GASDA_Fs", InferencePath::kFs}, {"GASDA", InferencePath::kAverage}};
  }
  return {{std::string(spec.name), spec.path}};
}

inline MetricReport evaluate(const InferenceNets& nets, const corpus::Corpus& test, InferencePath path, double cap) {
  if (test.target.empty() || test.target_depth.size() != test.target.size()) {
    throw DataError("evaluation corpus lacks target images with depth labels");
  }
  MetricAccumulator acc(cap);
  for (std::size_t i = 0; i < test.target.size(); ++i) acc.add(infer(nets, test.target[i].left, path), test.target_depth[i]);
  return acc.finish();
}

// One row per (run row, cap), sorted into table order; rows of the same label
// keep the order of `run_dirs`, and caps keep the order given.
inline std::vector<ReportRow> ablation_report(const std::vector<std::string>& run_dirs, const corpus::Corpus& test,
                                              const std::vector<double>& caps) {
  struct Keyed {
    std::size_t rank, run, cap;
    ReportRow row;
  };
  std::vector<Keyed> rows;
  for (std::size_t r = 0; r < run_dirs.size(); ++r) {
    const std::string& dir = run_dirs[r];
    std::optional<RunConfig> cfg;
    std::string failure;
    try {
      cfg = load_run_config((std::filesystem::path(dir) / "config.json").string());
    } catch (const std::exception& e) {
      failure = e.what();
    }
    if (!cfg) {
      const std::string label = std::filesystem::path(dir).filename().string();
      for (std::size_t c = 0; c < caps.size(); ++c) rows.push_back({report_rank(label), r, c, {label, caps[c], {}, failure}});
      continue;
    }
    const auto paths = report_paths(cfg->mode);
    std::optional<train::Models> models;
    try {
      models = train::load_models(train::final_checkpoint_path(*cfg, dir), mode_spec(cfg->mode));
    } catch (const std::exception& e) {
      failure = e.what();
    }
    for (const auto& [label, path] : paths) {
      for (std::size_t c = 0; c < caps.size(); ++c) {
        ReportRow row{label, caps[c], {}, failure};
        if (models) {
          try {
            row.metrics = evaluate(inference_nets(*models), test, path, caps[c]);
          } catch (const std::exception& e) {
            row.error = e.what();
          }
        }
        rows.push_back({report_rank(label), r, c, std::move(row)});
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Keyed& a, const Keyed& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.run != b.run) return a.run < b.run;
    return a.cap < b.cap;
  });
  std::vector<ReportRow> out;
  for (auto& k : rows) out.push_back(std::move(k.row));
  return out;
}

inline std::string report_header() { return "mode,cap,abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3,pixels"; }

// Metric cells hold "error: <reason>" then blanks when a row failed.
inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = report_header() + "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out += r.mode + "," + num(r.cap);
    if (r.metrics) {
      const auto& m = *r.metrics;
      for (const double v : {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.a1, m.a2, m.a3}) out += "," + num(v);
      out += "," + std::to_string(m.pixels);
    } else {
      std::string why = r.error;
      std::replace(why.begin(), why.end(), ',', ';');
      std::replace(why.begin(), why.end(), '\n', ' ');
      out += ",error: " + why + ",,,,,,,";
    }
    out += "\n";
  }
  return out;
}

inline void write_report(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << report_csv(rows);
  if (!f) throw IoError("write failed for '" + path + "'");
}

// --------------------------------------------------------------- viz

// False colour for depth maps: linear in inverse depth over [d_min, cap],
// near pixels warm (red) and far pixels cool (blue).
inline Tensor<T> colorize_depth(const Tensor<T>& depth, double cap = geometry::kDepthMax) {
  const Shape s = depth.shape();
  if (s.c != 1) throw ShapeError("colorize_depth: depth must have one channel, got " + s.str());
  const double inv_lo = 1.0 / cap, inv_hi = 1.0 / geometry::kDepthMin;
  std::vector<T> v(s.n * 3 * s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double z = std::clamp(static_cast<double>(depth[n * s.plane() + i]), geometry::kDepthMin, cap);
      const double t = (1.0 / z - inv_lo) / (inv_hi - inv_lo);  // 1 near, 0 far
      // Blue -> cyan -> green -> yellow -> red.
      const double r = std::clamp(4.0 * t - 2.0, 0.0, 1.0);
      const double g = std::clamp(t < 0.75 ? 4.0 * t : 4.0 - 4.0 * t, 0.0, 1.0);
      const double b = std::clamp(2.0 - 4.0 * t, 0.0, 1.0);
      const std::size_t base = n * 3 * s.plane() + i;
      v[base] = static_cast<T>(r);
      v[base + s.plane()] = static_cast<T>(g);
      v[base + 2 * s.plane()] = static_cast<T>(b);
    }
  }
  return Tensor<T>::from(Shape{s.n, 3, s.h, s.w}, std::move(v));
}

}  // namespace gasda::eval
