#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gasda/config.hpp"
#include "gasda/corpus.hpp"
#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/losses.hpp"
#include "gasda/networks.hpp"
#include "gasda/ops.hpp"
#include "gasda/optim.hpp"
#include "gasda/rng.hpp"
#include "gasda/synthworld.hpp"
#include "gasda/tensor.hpp"

namespace gasda::train {

using T = Standard;
using Params = nets::ParamSet<T>;
using losses::Term;

// A non-finite loss or activation during training; carries where it happened.
struct TrainingError : NumericError {
  TrainingError(const std::string& phase, std::size_t epoch, const std::string& what)
      : NumericError("non-finite loss in phase " + phase + " epoch " + std::to_string(epoch) + ": " + what),
        phase(phase),
        epoch(epoch) {}
  std::string phase;
  std::size_t epoch;
};

enum class Phase { kWarmupTrans, kWarmupDepth, kAltTrans, kAltDepth };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kWarmupTrans:
      return "warmup_trans";
    case Phase::kWarmupDepth:
      return "warmup_depth";
    case Phase::kAltTrans:
      return "alt_trans";
    case Phase::kAltDepth:
      return "alt_depth";
  }
  return "";
}

inline constexpr const char* kGs2t = "G_s2t";
inline constexpr const char* kGt2s = "G_t2s";
inline constexpr const char* kDt = "D_t";
inline constexpr const char* kDs = "D_s";
inline constexpr const char* kFt = "F_t";
inline constexpr const char* kFs = "F_s";

// The networks a mode trains. Absent networks have an empty name.
template <class U>
struct BasicModels {
  nets::ParamSet<U> g_s2t, g_t2s, d_t, d_s, f_t, f_s;

  bool has_translators() const { return !g_s2t.name.empty(); }
  bool has_ft() const { return !f_t.name.empty(); }
  bool has_fs() const { return !f_s.name.empty(); }

  std::vector<const nets::ParamSet<U>*> present() const {
    std::vector<const nets::ParamSet<U>*> out;
    for (const auto* p : {&g_s2t, &g_t2s, &d_t, &d_s, &f_t, &f_s}) {
      if (!p->name.empty()) out.push_back(p);
    }
    return out;
  }
  std::vector<nets::ParamSet<U>*> present() {
    std::vector<nets::ParamSet<U>*> out;
    for (auto* p : {&g_s2t, &g_t2s, &d_t, &d_s, &f_t, &f_s}) {
      if (!p->name.empty()) out.push_back(p);
    }
    return out;
  }
};

using Models = BasicModels<T>;

template <class U = T>
BasicModels<U> build_models(const RunConfig& cfg) {
  const ModeSpec& spec = mode_spec(cfg.mode);
  const std::uint64_t seed = cfg.schedule.seed;
  BasicModels<U> m;
  if (spec.translators) {
    m.g_s2t = nets::build_generator<U>(kGs2t, cfg.networks.generator(), seed);
    m.g_t2s = nets::build_generator<U>(kGt2s, cfg.networks.generator(), seed);
    m.d_t = nets::build_discriminator<U>(kDt, cfg.networks.discriminator(), seed);
    m.d_s = nets::build_discriminator<U>(kDs, cfg.networks.discriminator(), seed);
  }
  if (spec.ft) m.f_t = nets::build_depth_net<U>(kFt, cfg.networks.depth(), seed);
  if (spec.fs) m.f_s = nets::build_depth_net<U>(kFs, cfg.networks.depth(), seed);
  return m;
}

inline void save_models(const Models& m, const std::string& path) {
  const auto nets = m.present();
  nets::save_checkpoint<T>(path, {nets.begin(), nets.end()});
}

// Restores every network the mode needs from a checkpoint.
inline Models load_models(const std::string& path, const ModeSpec& spec) {
  if (!std::filesystem::exists(path)) throw DataError("missing checkpoint '" + path + "'");
  const auto nets = nets::load_checkpoint<T>(path);
  Models m;
  if (spec.translators) {
    m.g_s2t = nets::find_net(nets, kGs2t);
    m.g_t2s = nets::find_net(nets, kGt2s);
    m.d_t = nets::find_net(nets, kDt);
    m.d_s = nets::find_net(nets, kDs);
  }
  if (spec.ft) m.f_t = nets::find_net(nets, kFt);
  if (spec.fs) m.f_s = nets::find_net(nets, kFs);
  return m;
}

// One optimization step's inputs, stacked along N.
template <class U>
struct BasicBatch {
  Tensor<U> xs, ys;   // source left image and its depth
  Tensor<U> xt, xtr;  // target left and right images
};

using Batch = BasicBatch<T>;

inline Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  const Shape s = parts.front().shape();
  std::vector<T> v;
  v.reserve(s.numel() * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != s) throw ShapeError("stack: mismatched sample shapes");
    v.insert(v.end(), p.values().begin(), p.values().end());
  }
  return Tensor<T>::from(Shape{parts.size() * s.n, s.c, s.h, s.w}, std::move(v));
}

// ----------------------------------------------------------- objective

// Terms of the mode's objective that a phase optimizes.
inline std::array<bool, losses::kNumTerms> phase_terms(const ModeSpec& spec, Phase phase) {
  std::array<bool, losses::kNumTerms> on{};
  for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
    const bool translation = i < losses::kTranslationTerms.size();
    if (!spec.terms[i]) continue;
    switch (phase) {
      case Phase::kWarmupTrans:
        on[i] = translation;
        break;
      case Phase::kWarmupDepth:
      case Phase::kAltDepth:
        on[i] = !translation;
        break;
      case Phase::kAltTrans:
        on[i] = true;
        break;
    }
  }
  return on;
}

template <class U>
struct StepTerms {
  losses::TermSet<Tensor<U>> parts;
  Tensor<U> fake_t, fake_s;  // translated images (undefined if not computed)
};

namespace detail {

template <class U>
Tensor<U> pool_to(const Tensor<U>& x, std::size_t factor) {
  return factor == 1 ? x : ops::avg_pool2d(x, factor, factor);
}

// Mean over side-output scales of `fn(scale_index, factor)`.
template <class U, class Fn>
Tensor<U> over_scales(std::size_t scales, Fn&& fn) {
  Tensor<U> acc;
  for (std::size_t k = 0; k < scales; ++k) {
    const Tensor<U> v = fn(k, std::size_t{1} << k);
    acc = k == 0 ? v : ops::add(acc, v);
  }
  return ops::scale(acc, static_cast<U>(1.0 / static_cast<double>(scales)));
}

}  // namespace detail

// Evaluates every term in `on` for one batch. Translator forward passes are
// recorded on the graph only when `train_translators` is set.
template <class U>
StepTerms<U> compute_terms(const BasicModels<U>& m, const BasicBatch<U>& b, const ModeSpec& spec,
                               const std::array<bool, losses::kNumTerms>& on, bool train_translators,
                               const RunConfig& cfg) {
  auto act = [&](Term t) { return on[static_cast<std::size_t>(t)]; };
  const bool trans_terms = act(Term::kGanT) || act(Term::kGanS) || act(Term::kCyc) || act(Term::kIdt);
  const bool need_fake_t = spec.translators && (trans_terms || act(Term::kTde));
  const bool need_fake_s = spec.translators && (trans_terms || act(Term::kSgc) || act(Term::kDc) || (act(Term::kDs) && spec.fs));

  StepTerms<U> out;
  {
    std::optional<NoGradGuard> frozen;
    if (!train_translators) frozen.emplace();
    if (need_fake_t) out.fake_t = nets::translate(m.g_s2t, b.xs);
    if (need_fake_s) out.fake_s = nets::translate(m.g_t2s, b.xt);
  }

  const auto form = cfg.adversarial;
  if (act(Term::kGanT)) out.parts.set(Term::kGanT, losses::generator_adversarial_loss(nets::run_discriminator(m.d_t, out.fake_t), form));
  if (act(Term::kGanS)) out.parts.set(Term::kGanS, losses::generator_adversarial_loss(nets::run_discriminator(m.d_s, out.fake_s), form));
  if (act(Term::kCyc)) {
    out.parts.set(Term::kCyc, ops::add(losses::cycle_loss(b.xs, nets::translate(m.g_t2s, out.fake_t)),
                                       losses::cycle_loss(b.xt, nets::translate(m.g_s2t, out.fake_s))));
  }
  if (act(Term::kIdt)) {
    out.parts.set(Term::kIdt, ops::add(losses::identity_loss(b.xs, nets::translate(m.g_t2s, b.xs)),
                                       losses::identity_loss(b.xt, nets::translate(m.g_s2t, b.xt))));
  }

  const std::size_t scales = cfg.networks.depth_scales;
  const geometry::CameraRig rig = cfg.world.rig;
  std::vector<Tensor<U>> ys_pyr, xt_pyr, xtr_pyr;
  auto pyramid = [&](std::vector<Tensor<U>>& pyr, const Tensor<U>& x) {
    if (!pyr.empty()) return;
    for (std::size_t k = 0; k < scales; ++k) pyr.push_back(detail::pool_to(x, std::size_t{1} << k));
  };
  auto gc_term = [&](const std::vector<Tensor<U>>& depth) {
    pyramid(xt_pyr, b.xt);
    pyramid(xtr_pyr, b.xtr);
    return detail::over_scales<U>(scales, [&](std::size_t k, std::size_t f) {
      const auto disp = geometry::depth_to_disparity(depth[k], rig.scaled(1.0 / static_cast<double>(f)));
      return losses::geometry_consistency_loss(xt_pyr[k], geometry::inverse_warp(xtr_pyr[k], disp), cfg.weights);
    });
  };
  auto sup_term = [&](const std::vector<Tensor<U>>& depth) {
    pyramid(ys_pyr, b.ys);
    return detail::over_scales<U>(scales, [&](std::size_t k, std::size_t) { return losses::depth_supervised_loss(depth[k], ys_pyr[k]); });
  };

  if (act(Term::kSde)) out.parts.set(Term::kSde, sup_term(nets::run_depth_net(m.f_s, b.xs)));
  if (act(Term::kTde)) out.parts.set(Term::kTde, sup_term(nets::run_depth_net(m.f_t, spec.translators ? out.fake_t : b.xs)));

  std::vector<Tensor<U>> y_tt, y_st;
  const bool use_tt = spec.ft && (act(Term::kTgc) || act(Term::kDc) || act(Term::kDs));
  const bool use_st = spec.fs && (act(Term::kSgc) || act(Term::kDc) || act(Term::kDs));
  if (use_tt) y_tt = nets::run_depth_net(m.f_t, b.xt);
  if (use_st) y_st = nets::run_depth_net(m.f_s, spec.translators ? out.fake_s : b.xt);
  if (act(Term::kTgc)) out.parts.set(Term::kTgc, gc_term(y_tt));
  if (act(Term::kSgc)) out.parts.set(Term::kSgc, gc_term(y_st));
  if (act(Term::kDc)) {
    out.parts.set(Term::kDc, detail::over_scales<U>(scales, [&](std::size_t k, std::size_t) {
                    return losses::depth_consistency_loss(y_tt[k], y_st[k]);
                  }));
  }
  if (act(Term::kDs)) {
    pyramid(xt_pyr, b.xt);
    Tensor<U> ds;
    for (const auto* path : {&y_tt, &y_st}) {
      if (path->empty()) continue;
      const Tensor<U> v = detail::over_scales<U>(scales, [&](std::size_t k, std::size_t) {
        return losses::smoothness_loss((*path)[k], xt_pyr[k]);
      });
      ds = ds.defined() ? ops::add(ds, v) : v;
    }
    out.parts.set(Term::kDs, ds);
  }
  return out;
}

// ------------------------------------------------------------- logging

struct EpochLog {
  std::size_t epoch = 0;  // 1-based within its phase group (warm-up phase or alternation stage)
  std::string phase;
  losses::LossReport report;
};

inline std::string log_header() {
  std::string h = "epoch,phase";
  for (const auto name : losses::kTermNames) h += "," + std::string(name);
  return h + ",disc,total";
}

inline std::string log_row(const EpochLog& e) {
  char buf[64];
  std::string row = std::to_string(e.epoch) + "," + e.phase;
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    row += buf;
  };
  for (const double v : e.report.terms) put(v);
  put(e.report.disc);
  put(e.report.total);
  return row;
}

// --------------------------------------------------------------- driver

using Progress = std::function<void(const EpochLog&)>;

class Trainer {
 public:
  Trainer(RunConfig cfg, const corpus::Corpus& data, std::string run_dir, Progress progress = {})
      : cfg_(std::move(cfg)), spec_(mode_spec(cfg_.mode)), data_(data), dir_(std::move(run_dir)),
        progress_(std::move(progress)) {
    cfg_.validate();
    check_data();
  }

  const std::vector<EpochLog>& log() const { return log_; }
  const Models& models() const { return models_; }
  Models& models() { return models_; }
  const std::string& final_checkpoint() const { return final_ckpt_; }

  std::string checkpoint_path(const std::string& phase, std::size_t epoch) const {
    return (std::filesystem::path(dir_) / ("ckpt_" + phase + "_" + std::to_string(epoch) + ".bin")).string();
  }

  // Warm-up then (E2E modes) alternation. Writes config.json, log.csv and
  // one checkpoint per stage into the run directory.
  void run() {
    prepare_dir();
    warmup();
    if (spec_.e2e) alternate();
  }

  // Stage 1: translators on the translation objective, then depth nets with
  // frozen translators on the mode's depth terms.
  void warmup() {
    prepare_dir();
    models_ = build_models(cfg_);
    const auto& s = cfg_.schedule;
    if (spec_.translators) {
      optim::AdamState<T> g1, g2, d1, d2;
      for (std::size_t e = 1; e <= s.warmup_trans_epochs; ++e) {
        run_epoch(Phase::kWarmupTrans, e, s.warmup_trans, {{&models_.g_s2t, &g1}, {&models_.g_t2s, &g2}},
                  {{&models_.d_t, &d1}, {&models_.d_s, &d2}});
      }
      save_models(models_, checkpoint_path("warmup_trans", s.warmup_trans_epochs));
    }
    optim::AdamState<T> ft, fs;
    for (std::size_t e = 1; e <= s.warmup_depth_epochs; ++e) {
      run_epoch(Phase::kWarmupDepth, e, s.warmup_depth, depth_sets(ft, fs), {});
    }
    final_ckpt_ = checkpoint_path("warmup_depth", s.warmup_depth_epochs);
    save_models(models_, final_ckpt_);
  }

  // Stage 2: cycles of m translator epochs (depth nets frozen but in the
  // objective) and n depth epochs (translators and discriminators frozen),
  // starting from this run's warm-up checkpoint.
  void alternate() {
    if (!spec_.e2e) return;
    prepare_dir();
    const auto& s = cfg_.schedule;
    models_ = load_models(checkpoint_path("warmup_depth", s.warmup_depth_epochs), spec_);
    optim::AdamState<T> g1, g2, d1, d2, ft, fs;
    for (std::size_t e = 1; e <= s.alt_total_epochs; ++e) {
      const bool trans = (e - 1) % (s.m + s.n) < s.m;
      if (trans) {
        run_epoch(Phase::kAltTrans, e, s.alt_trans(), {{&models_.g_s2t, &g1}, {&models_.g_t2s, &g2}},
                  {{&models_.d_t, &d1}, {&models_.d_s, &d2}});
      } else {
        run_epoch(Phase::kAltDepth, e, s.alt_depth(), depth_sets(ft, fs), {});
      }
    }
    final_ckpt_ = checkpoint_path("alternate", s.alt_total_epochs);
    save_models(models_, final_ckpt_);
  }

 private:
  using Slot = std::pair<Params*, optim::AdamState<T>*>;

  std::vector<Slot> depth_sets(optim::AdamState<T>& ft, optim::AdamState<T>& fs) {
    std::vector<Slot> out;
    if (spec_.ft) out.push_back({&models_.f_t, &ft});
    if (spec_.fs) out.push_back({&models_.f_s, &fs});
    return out;
  }

  void check_data() const {
    const bool need_source = spec_.translators || spec_.active(Term::kSde) || spec_.active(Term::kTde);
    const bool need_target = spec_.translators || spec_.active(Term::kTgc) || spec_.active(Term::kSgc);
    if (need_source && data_.source.empty()) throw DataError("mode " + std::string(spec_.name) + " needs source samples");
    if (need_target && data_.target.empty()) throw DataError("mode " + std::string(spec_.name) + " needs target samples");
    if (data_.source.empty() && data_.target.empty()) throw DataError("corpus is empty");
  }

  void prepare_dir() {
    if (prepared_) return;
    corpus::ensure_dir(dir_);
    const auto path = std::filesystem::path(dir_);
    std::ofstream c(path / "config.json", std::ios::trunc);
    if (!c) throw IoError("cannot write '" + (path / "config.json").string() + "'");
    c << dump_json(to_json(cfg_));
    std::ofstream l(path / "log.csv", std::ios::trunc);
    if (!l) throw IoError("cannot write '" + (path / "log.csv").string() + "'");
    l << log_header() << "\n";
    prepared_ = true;
  }

  void append_log(const EpochLog& e) {
    log_.push_back(e);
    const auto path = std::filesystem::path(dir_) / "log.csv";
    std::ofstream l(path, std::ios::app);
    if (!l) throw IoError("cannot append to '" + path.string() + "'");
    l << log_row(e) << "\n";
    if (progress_) progress_(e);
  }

  std::vector<std::size_t> permutation(std::size_t n, Phase phase, std::size_t epoch, const char* domain) const {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    Rng rng(Rng::derive(cfg_.schedule.seed, std::string("shuffle:") + phase_name(phase) + ":" + domain, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
  }

  world::StereoSample<T> draw(const world::StereoSample<T>& s, Phase phase, std::size_t epoch, std::size_t slot) const {
    if (!cfg_.schedule.augment) return s;
    const std::uint64_t key = (static_cast<std::uint64_t>(epoch) << 32) ^ slot;
    return world::augment(s, Rng::derive(cfg_.schedule.seed, std::string("augment:") + phase_name(phase) + ":" + s.id, key));
  }

  // One pass over max(|source|, |target|) samples in steps of batch_size
  // source/target pairs.
  void run_epoch(Phase phase, std::size_t epoch, const optim::AdamConfig& opt, const std::vector<Slot>& trainable,
                 const std::vector<Slot>& discriminators) {
    const std::size_t ns = data_.source.size(), nt = data_.target.size();
    const std::size_t bs = cfg_.schedule.batch_size;
    const std::size_t steps = (std::max(ns, nt) + bs - 1) / bs;
    const auto ps = permutation(ns, phase, epoch, "source");
    const auto pt = permutation(nt, phase, epoch, "target");
    const auto on = phase_terms(spec_, phase);
    const bool train_trans = phase == Phase::kWarmupTrans || phase == Phase::kAltTrans;

    // Freeze everything, then unfreeze the phase's trainable sets.
    for (Params* p : models_.present()) p->set_requires_grad(false);
    for (const auto& [p, st] : trainable) p->set_requires_grad(true);

    losses::LossReport sum;
    const char* pname = phase_name(phase);
    try {
      for (std::size_t step = 0; step < steps; ++step) {
        Batch b;
        std::vector<Tensor<T>> xs, ys, xt, xtr;
        for (std::size_t j = 0; j < bs; ++j) {
          const std::size_t slot = step * bs + j;
          if (ns > 0) {
            const auto s = draw(data_.source[ps[slot % ns]], phase, epoch, slot);
            xs.push_back(s.left);
            ys.push_back(s.gt_depth);
          }
          if (nt > 0) {
            const auto t = draw(data_.target[pt[slot % nt]], phase, epoch, slot);
            xt.push_back(t.left);
            xtr.push_back(t.right);
          }
        }
        if (!xs.empty()) {
          b.xs = stack(xs);
          b.ys = stack(ys);
        }
        if (!xt.empty()) {
          b.xt = stack(xt);
          b.xtr = stack(xtr);
        }

        Graph<T> graph;
        GraphScope<T> scope(graph);
        const StepTerms<T> st = compute_terms(models_, b, spec_, on, train_trans, cfg_);
        const Tensor<T> total = losses::weighted_total(st.parts, cfg_.weights, Tensor<T>::scalar(T(0)));
        if (!total.all_finite()) throw NumericError("objective");
        for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
          if (st.parts.values[i]) sum.terms[i] += static_cast<double>(st.parts.values[i]->item());
        }
        sum.total += static_cast<double>(total.item());
        for (const auto& [p, s] : trainable) p->zero_grad();
        if (total.requires_grad()) graph.backward(total);
        for (const auto& [p, s] : trainable) optim::adam_step(*p, *s, opt);
        graph.clear();

        if (!discriminators.empty()) sum.disc += discriminator_step(st, b, opt, discriminators);
      }
    } catch (const NumericError& e) {
      throw TrainingError(pname, epoch, e.what());
    }
    for (const auto& [p, st] : trainable) p->set_requires_grad(false);

    EpochLog e{epoch, pname, {}};
    const double inv = 1.0 / static_cast<double>(steps);
    for (std::size_t i = 0; i < losses::kNumTerms; ++i) e.report.terms[i] = sum.terms[i] * inv;
    e.report.disc = sum.disc * inv;
    e.report.total = sum.total * inv;
    if (!std::isfinite(e.report.total)) throw TrainingError(pname, epoch, "epoch mean");
    append_log(e);
  }

  // Least-squares (or log-likelihood) update of D_t and D_s on detached fakes.
  double discriminator_step(const StepTerms<T>& st, const Batch& b, const optim::AdamConfig& opt,
                            const std::vector<Slot>& discriminators) {
    for (const auto& [p, s] : discriminators) {
      p->set_requires_grad(true);
      p->zero_grad();
    }
    Graph<T> graph;
    GraphScope<T> scope(graph);
    const auto form = cfg_.adversarial;
    const Tensor<T> ldt = losses::discriminator_adversarial_loss(nets::run_discriminator(models_.d_t, b.xt),
                                                                 nets::run_discriminator(models_.d_t, st.fake_t.detach()), form);
    const Tensor<T> lds = losses::discriminator_adversarial_loss(nets::run_discriminator(models_.d_s, b.xs),
                                                                 nets::run_discriminator(models_.d_s, st.fake_s.detach()), form);
    const Tensor<T> loss = ops::add(ldt, lds);
    graph.backward(loss);
    for (const auto& [p, s] : discriminators) {
      optim::adam_step(*p, *s, opt);
      p->set_requires_grad(false);
    }
    return static_cast<double>(loss.item());
  }

  RunConfig cfg_;
  const ModeSpec& spec_;
  const corpus::Corpus& data_;
  std::string dir_;
  Progress progress_;
  Models models_;
  std::vector<EpochLog> log_;
  std::string final_ckpt_;
  bool prepared_ = false;
};

// Path of the checkpoint a finished run of `cfg` leaves for evaluation.
inline std::string final_checkpoint_path(const RunConfig& cfg, const std::string& run_dir) {
  const auto& s = cfg.schedule;
  const std::string name = mode_spec(cfg.mode).e2e ? "ckpt_alternate_" + std::to_string(s.alt_total_epochs) + ".bin"
                                                   : "ckpt_warmup_depth_" + std::to_string(s.warmup_depth_epochs) + ".bin";
  return (std::filesystem::path(run_dir) / name).string();
}

}  // namespace gasda::train
