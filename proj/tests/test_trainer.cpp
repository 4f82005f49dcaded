#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gasda/trainer.hpp"
#include "test_util.hpp"

using namespace gasda;
using gasda::testing::ScratchDir;
using losses::Term;

namespace {

RunConfig tiny_config(TrainMode mode) {
  RunConfig c;
  c.mode = mode;
  c.world.height = 16;
  c.world.width = 32;
  c.world.rig = geometry::CameraRig{56.0 / 3.0, 0.54, 32};
  c.networks = NetworkConfig{4, 1, 4, 2, 4, 2};
  c.schedule.warmup_trans_epochs = 1;
  c.schedule.warmup_depth_epochs = 1;
  c.schedule.alt_total_epochs = 0;
  c.schedule.m = 1;
  c.schedule.n = 1;
  c.count = 2;
  return c;
}

corpus::Corpus tiny_corpus(const RunConfig& c, std::size_t count) {
  corpus::Corpus data;
  data.world = c.world;
  for (std::size_t i = 0; i < count; ++i) {
    data.source.push_back(world::generate_scene<Standard>(c.world, i));
    auto t = world::generate_scene<Standard>(c.world, count + i);
    t.id = world::sample_id(world::Domain::kTarget, count + i);
    data.target.push_back(world::shift_domain(t, c.world));
  }
  return data;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

// Independent restatement of the ablation table: trainable sets and active
// terms per mode.
TEST(ModeTable, MatchesDocumentedAblations) {
  struct Row {
    const char* name;
    bool trans, ft, fs, e2e;
    std::vector<Term> terms;
  };
  const std::vector<Term> trans{Term::kGanT, Term::kGanS, Term::kCyc, Term::kIdt};
  auto with = [&](std::vector<Term> extra) {
    std::vector<Term> v = trans;
    v.insert(v.end(), extra.begin(), extra.end());
    return v;
  };
  const std::vector<Row> rows{
      {"SYN", false, false, true, false, {Term::kSde}},
      {"SYN2REAL", true, true, false, false, with({Term::kTde})},
      {"SYN2REAL_E2E", true, true, false, true, with({Term::kTde})},
      {"SYN_GC", false, true, false, false, {Term::kTde, Term::kTgc, Term::kDs}},
      {"REAL", false, true, false, false, {Term::kTgc, Term::kDs}},
      {"SYN2REAL_GC", true, true, false, false, with({Term::kTde, Term::kTgc, Term::kDs})},
      {"SYN2REAL_GC_E2E", true, true, false, true, with({Term::kTde, Term::kTgc, Term::kDs})},
      {"REAL2SYN_SYN_GC_E2E", true, false, true, true, with({Term::kSde, Term::kSgc, Term::kDs})},
      {"GASDA_WO_DC", true, true, true, true, with({Term::kSde, Term::kTde, Term::kTgc, Term::kSgc, Term::kDs})},
      {"GASDA", true, true, true, true, with({Term::kSde, Term::kTde, Term::kTgc, Term::kSgc, Term::kDc, Term::kDs})},
  };
  ASSERT_EQ(mode_table().size(), rows.size());
  for (const auto& r : rows) {
    const ModeSpec& s = mode_spec(parse_mode(r.name));
    EXPECT_EQ(s.translators, r.trans) << r.name;
    EXPECT_EQ(s.ft, r.ft) << r.name;
    EXPECT_EQ(s.fs, r.fs) << r.name;
    EXPECT_EQ(s.e2e, r.e2e) << r.name;
    for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
      const bool want = std::find(r.terms.begin(), r.terms.end(), static_cast<Term>(i)) != r.terms.end();
      EXPECT_EQ(s.terms[i], want) << r.name << " " << losses::term_name(static_cast<Term>(i));
    }
  }
  EXPECT_EQ(mode_spec(TrainMode::kGasda).path, InferencePath::kAverage);
  EXPECT_EQ(mode_spec(TrainMode::kSyn).path, InferencePath::kFs);
  EXPECT_EQ(mode_spec(TrainMode::kSyn2Real).path, InferencePath::kFt);
}

TEST(PhaseTerms, SplitTranslationAndDepthTerms) {
  const ModeSpec& g = mode_spec(TrainMode::kGasda);
  const auto wt = train::phase_terms(g, train::Phase::kWarmupTrans);
  const auto wd = train::phase_terms(g, train::Phase::kWarmupDepth);
  const auto at = train::phase_terms(g, train::Phase::kAltTrans);
  const auto ad = train::phase_terms(g, train::Phase::kAltDepth);
  for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
    const bool translation = i < 4;
    EXPECT_EQ(wt[i], translation);
    EXPECT_EQ(wd[i], !translation);
    EXPECT_EQ(ad[i], !translation);
    EXPECT_TRUE(at[i]);
  }
  const ModeSpec& syn = mode_spec(TrainMode::kSyn);
  const auto sd = train::phase_terms(syn, train::Phase::kWarmupDepth);
  for (std::size_t i = 0; i < losses::kNumTerms; ++i) EXPECT_EQ(sd[i], static_cast<Term>(i) == Term::kSde);
}

TEST(Trainer, InactiveTermsLogZeroAndLogFormatIsStable) {
  ScratchDir dir("train_syn");
  const RunConfig cfg = tiny_config(TrainMode::kSyn);
  const auto data = tiny_corpus(cfg, 2);
  train::Trainer t(cfg, data, dir.str("run"));
  t.run();
  ASSERT_EQ(t.log().size(), 1u);
  const auto& r = t.log()[0].report;
  for (std::size_t i = 0; i < losses::kNumTerms; ++i) {
    if (static_cast<Term>(i) == Term::kSde) {
      EXPECT_GT(r.terms[i], 0.0);
    } else {
      EXPECT_EQ(r.terms[i], 0.0) << losses::term_name(static_cast<Term>(i));
    }
  }
  EXPECT_NEAR(r.total, 50.0 * r.terms[static_cast<std::size_t>(Term::kSde)], 1e-4 * r.total);
  const auto csv = lines(slurp(dir.str("run/log.csv")));
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[0], "epoch,phase,gan_t,gan_s,cyc,idt,sde,tde,tgc,sgc,dc,ds,disc,total");
  EXPECT_EQ(csv[1].rfind("1,warmup_depth,", 0), 0u) << csv[1];
  EXPECT_EQ(std::count(csv[1].begin(), csv[1].end(), ','), 13);
  EXPECT_TRUE(std::filesystem::exists(dir.str("run/config.json")));
  EXPECT_TRUE(std::filesystem::exists(dir.str("run/ckpt_warmup_depth_1.bin")));
  EXPECT_EQ(t.final_checkpoint(), train::final_checkpoint_path(cfg, dir.str("run")));
}

TEST(Trainer, AlternationCyclesMTranslatorAndNDepthEpochs) {
  ScratchDir dir("train_cycle");
  RunConfig cfg = tiny_config(TrainMode::kSyn2RealE2E);
  cfg.schedule.m = 3;
  cfg.schedule.n = 7;
  cfg.schedule.alt_total_epochs = 10;
  cfg.schedule.warmup_trans_epochs = 1;
  cfg.schedule.warmup_depth_epochs = 1;
  const auto data = tiny_corpus(cfg, 1);
  train::Trainer t(cfg, data, dir.str("run"));
  t.run();
  std::vector<std::string> phases;
  for (const auto& e : t.log()) phases.push_back(e.phase);
  const std::vector<std::string> want{"warmup_trans", "warmup_depth", "alt_trans", "alt_trans", "alt_trans", "alt_depth",
                                      "alt_depth",    "alt_depth",    "alt_depth", "alt_depth", "alt_depth", "alt_depth"};
  EXPECT_EQ(phases, want);
  EXPECT_TRUE(std::filesystem::exists(dir.str("run/ckpt_alternate_10.bin")));
  // Translator epochs log the discriminator objective; depth epochs do not.
  EXPECT_GT(t.log()[2].report.disc, 0.0);
  EXPECT_EQ(t.log()[5].report.disc, 0.0);
}

TEST(Trainer, NonEndToEndModesSkipAlternation) {
  ScratchDir dir("train_none2e");
  RunConfig cfg = tiny_config(TrainMode::kSyn2Real);
  cfg.schedule.alt_total_epochs = 5;
  const auto data = tiny_corpus(cfg, 1);
  train::Trainer t(cfg, data, dir.str("run"));
  t.run();
  ASSERT_EQ(t.log().size(), 2u);
  EXPECT_EQ(t.log()[1].phase, "warmup_depth");
  EXPECT_FALSE(std::filesystem::exists(dir.str("run/ckpt_alternate_5.bin")));
}

// Each phase leaves the networks it does not train bit-identical.
TEST(Trainer, FrozenNetworksDoNotMove) {
  ScratchDir dir("train_freeze");
  RunConfig cfg = tiny_config(TrainMode::kGasda);
  cfg.schedule.alt_total_epochs = 2;
  cfg.schedule.m = 1;
  cfg.schedule.n = 1;
  const auto data = tiny_corpus(cfg, 1);
  std::vector<std::pair<std::string, train::Models>> snaps;
  train::Trainer* self = nullptr;
  train::Trainer t(cfg, data, dir.str("run"), [&](const train::EpochLog& e) {
    const auto& m = self->models();
    train::Models c;
    c.g_s2t = m.g_s2t.clone();
    c.g_t2s = m.g_t2s.clone();
    c.d_t = m.d_t.clone();
    c.d_s = m.d_s.clone();
    c.f_t = m.f_t.clone();
    c.f_s = m.f_s.clone();
    snaps.emplace_back(e.phase, std::move(c));
  });
  self = &t;
  t.run();
  ASSERT_EQ(snaps.size(), 4u);
  const train::Models fresh = train::build_models(cfg);
  // warmup_trans: depth nets untouched, translators and discriminators move.
  EXPECT_TRUE(snaps[0].second.f_t.values_equal(fresh.f_t));
  EXPECT_TRUE(snaps[0].second.f_s.values_equal(fresh.f_s));
  EXPECT_FALSE(snaps[0].second.g_s2t.values_equal(fresh.g_s2t));
  EXPECT_FALSE(snaps[0].second.d_t.values_equal(fresh.d_t));
  auto translators_equal = [](const train::Models& a, const train::Models& b) {
    return a.g_s2t.values_equal(b.g_s2t) && a.g_t2s.values_equal(b.g_t2s) && a.d_t.values_equal(b.d_t) &&
           a.d_s.values_equal(b.d_s);
  };
  auto depth_equal = [](const train::Models& a, const train::Models& b) {
    return a.f_t.values_equal(b.f_t) && a.f_s.values_equal(b.f_s);
  };
  // warmup_depth: translators and discriminators frozen.
  EXPECT_EQ(snaps[1].first, "warmup_depth");
  EXPECT_TRUE(translators_equal(snaps[1].second, snaps[0].second));
  EXPECT_FALSE(depth_equal(snaps[1].second, snaps[0].second));
  // alt_trans: depth nets frozen.
  EXPECT_EQ(snaps[2].first, "alt_trans");
  EXPECT_TRUE(depth_equal(snaps[2].second, snaps[1].second));
  EXPECT_FALSE(snaps[2].second.g_s2t.values_equal(snaps[1].second.g_s2t));
  // alt_depth: translators and discriminators frozen.
  EXPECT_EQ(snaps[3].first, "alt_depth");
  EXPECT_TRUE(translators_equal(snaps[3].second, snaps[2].second));
  EXPECT_FALSE(depth_equal(snaps[3].second, snaps[2].second));
}

TEST(Trainer, SameSeedIsBitIdentical) {
  ScratchDir dir("train_det");
  RunConfig cfg = tiny_config(TrainMode::kGasda);
  cfg.schedule.alt_total_epochs = 2;
  const auto data = tiny_corpus(cfg, 2);
  train::Trainer a(cfg, data, dir.str("a"));
  a.run();
  train::Trainer b(cfg, data, dir.str("b"));
  b.run();
  EXPECT_EQ(slurp(dir.str("a/log.csv")), slurp(dir.str("b/log.csv")));
  EXPECT_EQ(slurp(a.final_checkpoint()), slurp(b.final_checkpoint()));
  cfg.schedule.seed = 1;
  train::Trainer c(cfg, data, dir.str("c"));
  c.run();
  EXPECT_NE(slurp(dir.str("a/log.csv")), slurp(dir.str("c/log.csv")));
}

TEST(Trainer, MissingDomainIsADataError) {
  ScratchDir dir("train_missing");
  const RunConfig cfg = tiny_config(TrainMode::kGasda);
  auto data = tiny_corpus(cfg, 1);
  data.target.clear();
  EXPECT_THROW(train::Trainer(cfg, data, dir.str("run")), DataError);
  auto only_target = tiny_corpus(cfg, 1);
  only_target.source.clear();
  EXPECT_THROW(train::Trainer(tiny_config(TrainMode::kSyn), only_target, dir.str("run")), DataError);
  EXPECT_NO_THROW(train::Trainer(tiny_config(TrainMode::kReal), only_target, dir.str("run")));
}

TEST(Trainer, AlternationWithoutWarmupCheckpointIsADataError) {
  ScratchDir dir("train_nockpt");
  RunConfig cfg = tiny_config(TrainMode::kGasda);
  cfg.schedule.alt_total_epochs = 1;
  const auto data = tiny_corpus(cfg, 1);
  train::Trainer t(cfg, data, dir.str("run"));
  EXPECT_THROW(t.alternate(), DataError);
}

TEST(Trainer, DivergenceReportsPhaseAndEpoch) {
  ScratchDir dir("train_nan");
  RunConfig cfg = tiny_config(TrainMode::kSyn);
  cfg.weights.gamma1 = 1e38;
  const auto data = tiny_corpus(cfg, 1);
  train::Trainer t(cfg, data, dir.str("run"));
  try {
    t.run();
    FAIL() << "expected a TrainingError";
  } catch (const train::TrainingError& e) {
    EXPECT_EQ(e.phase, "warmup_depth");
    EXPECT_EQ(e.epoch, 1u);
  }
}

TEST(Trainer, CheckpointRestoresEveryModeNetwork) {
  ScratchDir dir("train_ckpt");
  const RunConfig cfg = tiny_config(TrainMode::kGasda);
  const auto data = tiny_corpus(cfg, 1);
  train::Trainer t(cfg, data, dir.str("run"));
  t.run();
  const auto m = train::load_models(t.final_checkpoint(), mode_spec(cfg.mode));
  EXPECT_TRUE(m.f_t.values_equal(t.models().f_t));
  EXPECT_TRUE(m.f_s.values_equal(t.models().f_s));
  EXPECT_TRUE(m.g_t2s.values_equal(t.models().g_t2s));
  EXPECT_THROW(train::load_models(dir.str("run/none.bin"), mode_spec(cfg.mode)), DataError);
}
