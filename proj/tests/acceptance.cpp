// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all nine pass.
#include <CLI11.hpp>
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gasda/corpus.hpp"
#include "gasda/evaluation.hpp"
#include "gasda/geometry.hpp"
#include "gasda/gradcheck_suite.hpp"
#include "gasda/image_io.hpp"
#include "gasda/losses.hpp"
#include "gasda/trainer.hpp"

namespace fs = std::filesystem;
using namespace gasda;
using TW = Tensor<Wide>;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

TW random_tensor(Shape s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::vector<Wide> v(s.numel());
  for (auto& e : v) e = rng.uniform(lo, hi);
  return TW::from(s, std::move(v));
}

double max_abs_diff(const TW& a, const TW& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ------------------------------------------------------------ criteria 1-6

Outcome gradient_conformance() {
  const auto t0 = Clock::now();
  std::ostringstream log;
  const auto results = gradcheck::run_suite("", GradCheckOptions{}, log);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.report.max_rel_error > worst) {
      worst = r.report.max_rel_error;
      worst_name = r.name;
    }
    if (!r.report.passed) failed += " " + r.name;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu items, worst %s rel_err=%.3g (tol 1e-4), %.1fs (limit 300s)%s", results.size(),
                worst_name.c_str(), worst, secs, failed.empty() ? "" : (" failed:" + failed).c_str());
  return {failed.empty() && worst <= 1e-4 && secs < 300.0, buf};
}

Outcome geometry_fixed_points() {
  const losses::LossWeights w;
  double worst = 0;
  std::string where = "none";
  auto note = [&](const char* what, double v) {
    if (v > worst) {
      worst = v;
      where = what;
    }
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TW x = random_tensor({2, 3, 8, 12}, 10 + seed, 0, 1);
    const TW d = random_tensor({2, 1, 8, 12}, 50 + seed, 1, 80);
    note("inverse_warp(x,0)", max_abs_diff(geometry::inverse_warp(x, TW::zeros({2, 1, 8, 12})), x));
    const TW s = geometry::ssim(x, x);
    note("ssim(x,x)", max_abs_diff(s, TW::full(s.shape(), 1.0)));
    note("geometry_consistency(x,x)", std::abs(losses::geometry_consistency_loss(x, x, w).item()));
    note("smoothness(const)", std::abs(losses::smoothness_loss(TW::full({2, 1, 8, 12}, 7.5 + seed), x).item()));
    note("cycle(x,x)", std::abs(losses::cycle_loss(x, x).item()));
    note("identity(x,x)", std::abs(losses::identity_loss(x, x).item()));
    note("depth_consistency(d,d)", std::abs(losses::depth_consistency_loss(d, d).item()));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "max deviation %.3g at %s (tol 1e-12)", worst, where.c_str());
  return {worst <= 1e-12, buf};
}

Outcome photometric_constants() {
  const losses::LossWeights w;
  const TW v = losses::photometric_mix(TW::zeros({1, 3, 8, 8}), TW::full({1, 3, 8, 8}, 1.0), w.eta, w.mu);
  char buf[128];
  std::snprintf(buf, sizeof buf, "loss=%.12f (want 0.575 +- 1e-9), eta=%.2f mu=%.2f", v.item(), w.eta, w.mu);
  return {std::abs(v.item() - 0.575) <= 1e-9 && w.eta == 0.85 && w.mu == 0.15, buf};
}

Outcome objective_linearity() {
  const losses::LossWeights w;
  const std::array<double, losses::kNumTerms> coeff{1, 1, 10, 30, 50, 50, 50, 50, 50, 0.5};
  losses::TermSet<double> base;
  Rng rng(5);
  for (auto& v : base.values) v = rng.uniform(0.0, 2.0);
  const double f0 = losses::full_objective(base, w);
  double worst = 0;
  for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
    for (const double delta : {1e-3, 0.25, -0.5, 3.0}) {
      auto p = base;
      p.values[i] = *p.values[i] + delta;
      const double got = losses::full_objective(p, w) - f0;
      worst = std::max(worst, std::abs(got - coeff[i] * delta) / std::max(1.0, std::abs(coeff[i] * delta)));
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "max relative deviation %.3g over 10 terms x 4 deltas (tol 1e-12)", worst);
  return {worst <= 1e-12, buf};
}

Outcome metric_oracle() {
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<Wide> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.5, 90.0);
      g[i] = rng.uniform(0.5, 90.0);
    }
    g[0] = rng.uniform(1.0, 79.0);
    const auto m = eval::compute_metrics(TW::from({1, 1, 1, n}, p), TW::from({1, 1, 1, n}, g), 80.0);
    // Brute force, pixel by pixel.
    double k = 0, ar = 0, sr = 0, se = 0, sl = 0, c1 = 0, c2 = 0, c3 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(g[i] > 0 && g[i] < 80.0)) continue;
      const double q = std::min(80.0, std::max(1.0, p[i]));
      const double r = q > g[i] ? q / g[i] : g[i] / q;
      k += 1;
      ar += std::abs(q - g[i]) / g[i];
      sr += (q - g[i]) * (q - g[i]) / g[i];
      se += (q - g[i]) * (q - g[i]);
      sl += std::pow(std::log(q) - std::log(g[i]), 2);
      c1 += r < 1.25;
      c2 += r < 1.5625;
      c3 += r < 1.953125;
    }
    const double ref[7] = {ar / k, sr / k, std::sqrt(se / k), std::sqrt(sl / k), c1 / k, c2 / k, c3 / k};
    const double got[7] = {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.a1, m.a2, m.a3};
    for (int j = 0; j < 7; ++j) worst = std::max(worst, std::abs(ref[j] - got[j]) / std::max(1.0, std::abs(ref[j])));
  }
  const TW gt = random_tensor({1, 1, 4, 4}, 3, 1, 40);
  const auto d = eval::compute_metrics(ops::scale(gt, 2.0), gt, 80.0);
  const double closed = std::max({std::abs(d.abs_rel - 1.0), d.a1, d.a2, d.a3, std::abs(d.rmse_log - std::log(2.0))});
  char buf[160];
  std::snprintf(buf, sizeof buf, "oracle max deviation %.3g (tol 1e-10), pred=2gt deviation %.3g (tol 1e-9)", worst, closed);
  return {worst <= 1e-10 && closed <= 1e-9, buf};
}

Outcome renderer_soundness() {
  const auto t0 = Clock::now();
  const world::WorldConfig cfg;
  double worst = 0, occluded = 0, total = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto r = world::render_scene<Wide>(cfg, i);
    const TW recon = geometry::inverse_warp(r.sample.right, geometry::depth_to_disparity(r.sample.gt_depth, cfg.rig));
    const Shape s = recon.shape();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          if (r.occlusion.at(0, 0, y, x) != 0.0) continue;
          worst = std::max(worst, std::abs(recon.at(0, c, y, x) - r.sample.left.at(0, c, y, x)));
        }
    for (const double o : r.occlusion.values()) occluded += o;
    total += static_cast<double>(r.occlusion.numel());
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "100 scenes, max error %.3g outside occlusions (tol 1e-6), occluded %.2f%%, %.1fs (limit 120s)",
                worst, 100.0 * occluded / total, secs);
  return {worst < 1e-6 && secs < 120.0, buf};
}

// ------------------------------------------------------------ criteria 7-9

const std::vector<TrainMode> kAblationModes{TrainMode::kSyn, TrainMode::kSyn2Real, TrainMode::kSyn2RealGcE2E,
                                            TrainMode::kGasda};

struct AblationRun {
  std::map<std::string, eval::MetricReport> metrics;  // report label -> cap-80 metrics
  std::map<std::string, std::string> logs;            // mode -> log.csv bytes
  double seconds = 0;
  std::string error;
};

AblationRun ablation(const fs::path& root, const corpus::Corpus& train_data, const corpus::Corpus& test_data) {
  AblationRun out;
  const auto t0 = Clock::now();
  std::vector<std::string> dirs;
  try {
    for (const TrainMode mode : kAblationModes) {
      RunConfig cfg;
      cfg.mode = mode;
      cfg.world = train_data.world;
      const fs::path dir = root / mode_name(mode);
      const auto t1 = Clock::now();
      train::Trainer trainer(cfg, train_data, dir.string());
      trainer.run();
      std::printf("  trained %-16s in %6.1fs (%s)\n", mode_name(mode).c_str(), seconds_since(t1), dir.c_str());
      std::fflush(stdout);
      out.logs[mode_name(mode)] = slurp(dir / "log.csv");
      dirs.push_back(dir.string());
    }
    for (const auto& row : eval::ablation_report(dirs, test_data, {80.0})) {
      if (!row.metrics) throw DataError(row.mode + ": " + row.error);
      out.metrics[row.mode] = *row.metrics;
    }
    eval::write_report((root / "report.csv").string(), eval::ablation_report(dirs, test_data, {80.0, 50.0}));
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome ablation_trend(const AblationRun& r) {
  if (!r.error.empty()) return {false, "run failed: " + r.error};
  const double syn = r.metrics.at("SYN").abs_rel, s2r = r.metrics.at("SYN2REAL").abs_rel;
  const double gce = r.metrics.at("SYN2REAL_GC_E2E").abs_rel, gasda = r.metrics.at("GASDA").abs_rel;
  const double tie = 0.002;
  const bool order = syn > s2r && s2r > gce && gce >= gasda - tie;
  const bool minimum = gasda <= std::min({syn, s2r}) && gasda <= gce + tie;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "abs_rel@80m SYN=%.4f SYN2REAL=%.4f SYN2REAL_GC_E2E=%.4f GASDA=%.4f (GASDA_Ft=%.4f GASDA_Fs=%.4f), %.1f min "
                "(limit 60)",
                syn, s2r, gce, gasda, r.metrics.at("GASDA_Ft").abs_rel, r.metrics.at("GASDA_Fs").abs_rel, r.seconds / 60.0);
  return {order && minimum && r.seconds < 3600.0, buf};
}

int run_cli(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome average_inference(const std::string& cli, const fs::path& run_dir, const fs::path& test_root,
                          const corpus::Corpus& test_data) {
  if (cli.empty()) return {false, "no --cli given"};
  const fs::path scratch = run_dir / "infer_check";
  fs::create_directories(scratch);
  // Means are taken in float32, the PFM precision; the exact mean stays
  // within half an ulp of the stored value.
  double worst = 0, worst_exact_ulps = 0;
  std::size_t images = 0;
  for (const auto& s : test_data.target) {
    const std::string img = (test_root / "target" / (s.id + "_left.ppm")).string();
    const std::string base = "'" + cli + "' infer --run '" + run_dir.string() + "' --image '" + img + "'";
    std::map<std::string, Tensor<Standard>> out;
    for (const char* path : {"ft", "fs", "avg"}) {
      const std::string pfm = (scratch / (std::string(path) + ".pfm")).string();
      if (run_cli(base + " --path " + path + " --out '" + pfm + "'") != 0) return {false, "infer failed on " + s.id};
      out[path] = io::load_depth<Standard>(pfm);
    }
    for (std::size_t i = 0; i < out["avg"].numel(); ++i) {
      const float a = out["avg"][i], mean = (out["ft"][i] + out["fs"][i]) / 2.0f;
      worst = std::max(worst, std::abs(static_cast<double>(a) - static_cast<double>(mean)));
      const double exact = 0.5 * (static_cast<double>(out["ft"][i]) + static_cast<double>(out["fs"][i]));
      const double ulp = static_cast<double>(std::nextafter(a, INFINITY) - a);
      worst_exact_ulps = std::max(worst_exact_ulps, std::abs(static_cast<double>(a) - exact) / ulp);
    }
    ++images;
  }
  char buf[192];
  std::snprintf(buf, sizeof buf,
                "%zu test images, max |avg - (ft+fs)/2| = %.3g m in float32 (tol 1e-6), exact mean within %.2f ulp",
                images, worst, worst_exact_ulps);
  return {images > 0 && worst <= 1e-6 && worst_exact_ulps <= 0.5, buf};
}

Outcome determinism(const AblationRun& a, const AblationRun& b) {
  if (!a.error.empty() || !b.error.empty()) return {false, "run failed: " + a.error + b.error};
  std::string diff;
  for (const auto& [mode, log] : a.logs) {
    if (b.logs.count(mode) == 0 || b.logs.at(mode) != log) diff += " log:" + mode;
  }
  for (const auto& [label, m] : a.metrics) {
    const auto it = b.metrics.find(label);
    if (it == b.metrics.end() || std::memcmp(&m, &it->second, sizeof m) != 0) diff += " metrics:" + label;
  }
  std::size_t rows = 0;
  for (const auto& [mode, log] : a.logs) rows += static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n'));
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu log lines and %zu metric rows compared bit for bit", rows, a.metrics.size());
  return {diff.empty(), diff.empty() ? std::string(buf) : "mismatch:" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::string work = "acceptance_work", cli;
  std::size_t test_count = 100;
  app.add_option("--work", work, "Scratch directory (wiped at start)");
  app.add_option("--cli", cli, "Path of the gasda executable, used for the inference criterion");
  app.add_option("--test-count", test_count, "Held-out scenes per domain")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  fs::remove_all(root);
  fs::create_directories(root);

  std::vector<std::pair<std::string, Outcome>> results;
  auto report = [&](int id, const char* name, Outcome o) {
    std::printf("criterion %d %-26s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, std::move(o));
  };

  report(1, "gradient-conformance", gradient_conformance());
  report(2, "geometry-fixed-points", geometry_fixed_points());
  report(3, "photometric-constants", photometric_constants());
  report(4, "objective-linearity", objective_linearity());
  report(5, "metric-oracle", metric_oracle());
  report(6, "renderer-soundness", renderer_soundness());

  const RunConfig defaults;
  corpus::write_corpus((root / "train").string(), defaults.world, defaults.count);
  corpus::write_corpus((root / "test").string(), defaults.world, test_count, corpus::kTestOffset);
  const corpus::Corpus train_data = corpus::load_corpus((root / "train").string());
  const corpus::Corpus test_data = corpus::load_corpus((root / "test").string(), true);
  std::printf("  corpus: %zu source + %zu target training samples, %zu held-out target images\n", train_data.source.size(),
              train_data.target.size(), test_data.target.size());

  const AblationRun first = ablation(root / "run_a", train_data, test_data);
  report(7, "ablation-trend", ablation_trend(first));
  report(8, "average-inference", average_inference(cli, root / "run_a" / "GASDA", root / "test", test_data));
  const AblationRun second = ablation(root / "run_b", train_data, test_data);
  report(9, "determinism", determinism(first, second));

  std::size_t passed = 0;
  for (const auto& [name, o] : results) passed += o.pass ? 1 : 0;
  std::printf("acceptance: %zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
