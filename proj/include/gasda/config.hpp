#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/losses.hpp"
#include "gasda/networks.hpp"
#include "gasda/optim.hpp"
#include "gasda/synthworld.hpp"

namespace gasda {

using Json = nlohmann::ordered_json;

// ------------------------------------------------------------------ modes

enum class TrainMode {
  kSyn,
  kSyn2Real,
  kSyn2RealE2E,
  kSynGc,
  kReal,
  kSyn2RealGc,
  kSyn2RealGcE2E,
  kReal2SynSynGcE2E,
  kGasdaWoDc,
  kGasda,
};

// Which depth prediction a trained model reports for a target image.
enum class InferencePath { kFt, kFs, kAverage };

// Trainable networks, active loss terms and inference path of one mode.
struct ModeSpec {
  TrainMode mode;
  std::string_view name;
  bool translators;  // G_s2t, G_t2s, D_t, D_s
  bool ft;
  bool fs;
  bool e2e;          // runs the alternation stage
  std::array<bool, losses::kNumTerms> terms;
  InferencePath path;

  bool active(losses::Term t) const { return terms[static_cast<std::size_t>(t)]; }
};

namespace detail {

constexpr std::array<bool, losses::kNumTerms> term_mask(std::initializer_list<losses::Term> on) {
  std::array<bool, losses::kNumTerms> m{};
  for (const auto t : on) m[static_cast<std::size_t>(t)] = true;
  return m;
}

}  // namespace detail

inline const std::vector<ModeSpec>& mode_table() {
  using T = losses::Term;
  static const std::vector<ModeSpec> table{
      {TrainMode::kSyn, "SYN", false, false, true, false, detail::term_mask({T::kSde}), InferencePath::kFs},
      {TrainMode::kSyn2Real, "SYN2REAL", true, true, false, false,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kTde}), InferencePath::kFt},
      {TrainMode::kSyn2RealE2E, "SYN2REAL_E2E", true, true, false, true,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kTde}), InferencePath::kFt},
      {TrainMode::kSynGc, "SYN_GC", false, true, false, false, detail::term_mask({T::kTde, T::kTgc, T::kDs}),
       InferencePath::kFt},
      {TrainMode::kReal, "REAL", false, true, false, false, detail::term_mask({T::kTgc, T::kDs}), InferencePath::kFt},
      {TrainMode::kSyn2RealGc, "SYN2REAL_GC", true, true, false, false,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kTde, T::kTgc, T::kDs}), InferencePath::kFt},
      {TrainMode::kSyn2RealGcE2E, "SYN2REAL_GC_E2E", true, true, false, true,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kTde, T::kTgc, T::kDs}), InferencePath::kFt},
      {TrainMode::kReal2SynSynGcE2E, "REAL2SYN_SYN_GC_E2E", true, false, true, true,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kSde, T::kSgc, T::kDs}), InferencePath::kFs},
      {TrainMode::kGasdaWoDc, "GASDA_WO_DC", true, true, true, true,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kSde, T::kTde, T::kTgc, T::kSgc, T::kDs}),
       InferencePath::kAverage},
      {TrainMode::kGasda, "GASDA", true, true, true, true,
       detail::term_mask({T::kGanT, T::kGanS, T::kCyc, T::kIdt, T::kSde, T::kTde, T::kTgc, T::kSgc, T::kDc, T::kDs}),
       InferencePath::kAverage},
  };
  return table;
}

inline const ModeSpec& mode_spec(TrainMode m) {
  for (const auto& s : mode_table()) {
    if (s.mode == m) return s;
  }
  throw ConfigError("unknown train mode");
}

inline std::string mode_name(TrainMode m) { return std::string(mode_spec(m).name); }

inline std::string valid_mode_list() {
  std::string out;
  for (const auto& s : mode_table()) out += (out.empty() ? "" : ", ") + std::string(s.name);
  return out;
}

// Accepts the canonical names and their hyphenated spellings (SYN2REAL-GC-E2E).
inline TrainMode parse_mode(std::string_view text) {
  std::string norm(text);
  std::replace(norm.begin(), norm.end(), '-', '_');
  std::transform(norm.begin(), norm.end(), norm.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (norm == "GASDA_W/ODC") norm = "GASDA_WO_DC";
  for (const auto& s : mode_table()) {
    if (s.name == norm) return s.mode;
  }
  throw ConfigError("invalid mode '" + std::string(text) + "'; valid modes: " + valid_mode_list());
}

// -------------------------------------------------------------- schedule

struct TrainSchedule {
  std::size_t warmup_trans_epochs = 10;
  std::size_t warmup_depth_epochs = 20;
  std::size_t alt_total_epochs = 40;
  std::size_t m = 3;  // translator epochs per alternation cycle
  std::size_t n = 7;  // depth epochs per alternation cycle
  optim::AdamConfig warmup_trans{2e-4, 0.5, 0.999, 1e-8};
  optim::AdamConfig warmup_depth{1e-4, 0.9, 0.999, 1e-8};
  double alt_trans_lr = 2e-6;
  double alt_depth_lr = 1e-5;
  std::size_t batch_size = 1;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (m == 0 || n == 0) throw ConfigError("schedule: m and n must be > 0");
    if (batch_size == 0) throw ConfigError("schedule: batch_size must be > 0");
    warmup_trans.validate();
    warmup_depth.validate();
    if (!(alt_trans_lr > 0.0) || !(alt_depth_lr > 0.0)) throw ConfigError("schedule: learning rates must be > 0");
  }

  optim::AdamConfig alt_trans() const { return {alt_trans_lr, warmup_trans.beta1, warmup_trans.beta2, warmup_trans.eps}; }
  optim::AdamConfig alt_depth() const { return {alt_depth_lr, warmup_depth.beta1, warmup_depth.beta2, warmup_depth.eps}; }
};

struct NetworkConfig {
  std::size_t generator_base = 16;
  std::size_t generator_blocks = 2;
  std::size_t discriminator_base = 16;
  std::size_t discriminator_layers = 3;
  std::size_t depth_base = 16;
  std::size_t depth_scales = 4;

  nets::NetArch generator() const { return nets::generator_arch(generator_base, generator_blocks); }
  nets::NetArch discriminator() const { return nets::discriminator_arch(discriminator_base, discriminator_layers); }
  nets::NetArch depth() const { return nets::depth_arch(depth_base, depth_scales); }

  void validate() const {
    generator().validate();
    discriminator().validate();
    depth().validate();
  }
};

// Everything that determines a run. Serialized verbatim into the run directory.
struct RunConfig {
  world::WorldConfig world{};
  TrainSchedule schedule{};
  losses::LossWeights weights{};
  losses::AdversarialForm adversarial = losses::AdversarialForm::kLeastSquares;
  NetworkConfig networks{};
  TrainMode mode = TrainMode::kGasda;
  std::size_t count = 100;  // samples per domain in a generated corpus

  void validate() const {
    world.validate();
    schedule.validate();
    weights.validate();
    networks.validate();
    const std::size_t unit = std::size_t{1} << (networks.depth_scales - 1);
    if (world.height % unit != 0 || world.width % unit != 0 || world.height % 4 != 0 || world.width % 4 != 0) {
      throw ConfigError("config: resolution incompatible with the network pyramids");
    }
    if (count == 0) throw ConfigError("config: count must be > 0");
  }
};

// ------------------------------------------------------------------- JSON

namespace detail {

// Reads declared keys from a JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <class Fn>
  void object(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (j_.contains(key)) fn(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json adam_json(const optim::AdamConfig& a) {
  return Json{{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

inline void read_adam(const Json& j, const std::string& path, optim::AdamConfig& a) {
  ObjectReader r(j, path);
  r.get("lr", a.lr);
  r.get("beta1", a.beta1);
  r.get("beta2", a.beta2);
  r.get("eps", a.eps);
  r.finish();
}

}  // namespace detail

inline Json to_json(const world::WorldConfig& w) {
  const auto& s = w.shift;
  return Json{{"height", w.height},
              {"width", w.width},
              {"layers", w.layers},
              {"depth_min", w.depth_min},
              {"depth_max", w.depth_max},
              {"object_near", w.object_near},
              {"object_far", w.object_far},
              {"camera_height", w.camera_height},
              {"horizon", w.horizon},
              {"haze_distance", w.haze_distance},
              {"rig", Json{{"focal_px", w.rig.focal_px}, {"baseline_m", w.rig.baseline_m}, {"width_px", w.rig.width_px}}},
              {"shift", Json{{"gain", s.gain},
                             {"bias", s.bias},
                             {"contrast", s.contrast},
                             {"cast", s.cast},
                             {"noise_std", s.noise_std},
                             {"vignette", s.vignette}}},
              {"seed", w.seed}};
}

inline void from_json_into(const Json& j, const std::string& path, world::WorldConfig& w) {
  detail::ObjectReader r(j, path);
  r.get("height", w.height);
  r.get("width", w.width);
  r.get("layers", w.layers);
  r.get("depth_min", w.depth_min);
  r.get("depth_max", w.depth_max);
  r.get("object_near", w.object_near);
  r.get("object_far", w.object_far);
  r.get("camera_height", w.camera_height);
  r.get("horizon", w.horizon);
  r.get("haze_distance", w.haze_distance);
  bool rig_width_given = false;
  r.object("rig", [&](const Json& jr, const std::string& p) {
    detail::ObjectReader rr(jr, p);
    rr.get("focal_px", w.rig.focal_px);
    rr.get("baseline_m", w.rig.baseline_m);
    rr.get("width_px", w.rig.width_px);
    rig_width_given = jr.contains("width_px");
    rr.finish();
  });
  if (!rig_width_given) w.rig.width_px = w.width;
  r.object("shift", [&](const Json& js, const std::string& p) {
    detail::ObjectReader rs(js, p);
    rs.get("gain", w.shift.gain);
    rs.get("bias", w.shift.bias);
    rs.get("contrast", w.shift.contrast);
    rs.get("cast", w.shift.cast);
    rs.get("noise_std", w.shift.noise_std);
    rs.get("vignette", w.shift.vignette);
    rs.finish();
  });
  r.get("seed", w.seed);
  r.finish();
}

inline Json to_json(const RunConfig& c) {
  const auto& s = c.schedule;
  const auto& w = c.weights;
  const auto& n = c.networks;
  return Json{
      {"mode", mode_name(c.mode)},
      {"count", c.count},
      {"world", to_json(c.world)},
      {"schedule", Json{{"warmup_trans_epochs", s.warmup_trans_epochs},
                        {"warmup_depth_epochs", s.warmup_depth_epochs},
                        {"alt_total_epochs", s.alt_total_epochs},
                        {"m", s.m},
                        {"n", s.n},
                        {"warmup_trans", detail::adam_json(s.warmup_trans)},
                        {"warmup_depth", detail::adam_json(s.warmup_depth)},
                        {"alt_trans_lr", s.alt_trans_lr},
                        {"alt_depth_lr", s.alt_depth_lr},
                        {"batch_size", s.batch_size},
                        {"augment", s.augment},
                        {"seed", s.seed}}},
      {"weights", Json{{"lambda1", w.lambda1},
                       {"lambda2", w.lambda2},
                       {"eta", w.eta},
                       {"mu", w.mu},
                       {"gamma1", w.gamma1},
                       {"gamma2", w.gamma2},
                       {"gamma3", w.gamma3},
                       {"gamma4", w.gamma4}}},
      {"adversarial", c.adversarial == losses::AdversarialForm::kLeastSquares ? "least_squares" : "log_likelihood"},
      {"networks", Json{{"generator_base", n.generator_base},
                        {"generator_blocks", n.generator_blocks},
                        {"discriminator_base", n.discriminator_base},
                        {"discriminator_layers", n.discriminator_layers},
                        {"depth_base", n.depth_base},
                        {"depth_scales", n.depth_scales}}},
  };
}

// Fields absent from `j` keep their defaults; unknown keys are errors.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "config");
  std::string mode = mode_name(c.mode);
  r.get("mode", mode);
  c.mode = parse_mode(mode);
  r.get("count", c.count);
  r.object("world", [&](const Json& jw, const std::string& p) { from_json_into(jw, p, c.world); });
  r.object("schedule", [&](const Json& js, const std::string& p) {
    auto& s = c.schedule;
    detail::ObjectReader rs(js, p);
    rs.get("warmup_trans_epochs", s.warmup_trans_epochs);
    rs.get("warmup_depth_epochs", s.warmup_depth_epochs);
    rs.get("alt_total_epochs", s.alt_total_epochs);
    rs.get("m", s.m);
    rs.get("n", s.n);
    rs.object("warmup_trans", [&](const Json& ja, const std::string& pa) { detail::read_adam(ja, pa, s.warmup_trans); });
    rs.object("warmup_depth", [&](const Json& ja, const std::string& pa) { detail::read_adam(ja, pa, s.warmup_depth); });
    rs.get("alt_trans_lr", s.alt_trans_lr);
    rs.get("alt_depth_lr", s.alt_depth_lr);
    rs.get("batch_size", s.batch_size);
    rs.get("augment", s.augment);
    rs.get("seed", s.seed);
    rs.finish();
  });
  r.object("weights", [&](const Json& jw, const std::string& p) {
    auto& w = c.weights;
    detail::ObjectReader rw(jw, p);
    rw.get("lambda1", w.lambda1);
    rw.get("lambda2", w.lambda2);
    rw.get("eta", w.eta);
    rw.get("mu", w.mu);
    rw.get("gamma1", w.gamma1);
    rw.get("gamma2", w.gamma2);
    rw.get("gamma3", w.gamma3);
    rw.get("gamma4", w.gamma4);
    rw.finish();
  });
  std::string adv = "least_squares";
  r.get("adversarial", adv);
  if (adv == "least_squares") {
    c.adversarial = losses::AdversarialForm::kLeastSquares;
  } else if (adv == "log_likelihood") {
    c.adversarial = losses::AdversarialForm::kLogLikelihood;
  } else {
    throw ConfigError("config.adversarial: expected least_squares or log_likelihood, got '" + adv + "'");
  }
  r.object("networks", [&](const Json& jn, const std::string& p) {
    auto& n = c.networks;
    detail::ObjectReader rn(jn, p);
    rn.get("generator_base", n.generator_base);
    rn.get("generator_blocks", n.generator_blocks);
    rn.get("discriminator_base", n.discriminator_base);
    rn.get("discriminator_layers", n.discriminator_layers);
    rn.get("depth_base", n.depth_base);
    rn.get("depth_scales", n.depth_scales);
    rn.finish();
  });
  r.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace gasda
