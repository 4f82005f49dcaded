#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gasda/config.hpp"
#include "gasda/corpus.hpp"
#include "gasda/error.hpp"
#include "gasda/evaluation.hpp"
#include "gasda/gradcheck_suite.hpp"
#include "gasda/image_io.hpp"
#include "gasda/trainer.hpp"

namespace {

using namespace gasda;

enum Exit : int { kOk = 0, kGradFail = 1, kConfig = 2, kIo = 3, kData = 4, kNumeric = 5 };

int fail(const char* kind, const std::string& msg, int code) {
  std::string line = msg;
  for (char& c : line) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "error[%s]: %s\n", kind, line.c_str());
  return code;
}

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

struct GenArgs {
  std::string config, out, split = "train";
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
};

int gen_data(const GenArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.count) cfg.count = *a.count;
  if (a.seed) cfg.world.seed = *a.seed;
  cfg.validate();
  const std::uint64_t offset = a.split == "test" ? corpus::kTestOffset : 0;
  corpus::write_corpus(a.out, cfg.world, cfg.count, offset);
  std::printf("wrote %zu source + %zu target samples (%s split) to %s\n", cfg.count, cfg.count, a.split.c_str(),
              a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string config, data, mode, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> warmup_trans, warmup_depth, alt_total;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (!a.mode.empty()) cfg.mode = parse_mode(a.mode);
  if (a.seed) cfg.schedule.seed = *a.seed;
  if (a.warmup_trans) cfg.schedule.warmup_trans_epochs = *a.warmup_trans;
  if (a.warmup_depth) cfg.schedule.warmup_depth_epochs = *a.warmup_depth;
  if (a.alt_total) cfg.schedule.alt_total_epochs = *a.alt_total;
  cfg.validate();
  const corpus::Corpus data = corpus::load_corpus(a.data);
  cfg.world = data.world;  // the corpus defines the world the run trains on
  train::Trainer trainer(cfg, data, a.out, [&](const train::EpochLog& e) {
    if (!a.quiet) std::printf("%s\n", train::log_row(e).c_str());
    std::fflush(stdout);
  });
  trainer.run();
  std::printf("final checkpoint %s\n", trainer.final_checkpoint().c_str());
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> runs;
  std::string data, out;
  std::vector<double> caps{80.0, 50.0};
};

int eval_cmd(const EvalArgs& a) {
  const corpus::Corpus test = corpus::load_corpus(a.data, true);
  const auto rows = eval::ablation_report(a.runs, test, a.caps);
  eval::write_report(a.out, rows);
  std::printf("%s", eval::report_csv(rows).c_str());
  return kOk;
}

struct InferArgs {
  std::string run, image, out, viz, path;
};

int infer_cmd(const InferArgs& a) {
  const RunConfig cfg = load_run_config((std::filesystem::path(a.run) / "config.json").string());
  const ModeSpec& spec = mode_spec(cfg.mode);
  const InferencePath path = a.path.empty() ? spec.path : eval::parse_path(a.path);
  const train::Models models = train::load_models(train::final_checkpoint_path(cfg, a.run), spec);
  const Tensor<Standard> img = io::load_image<Standard>(a.image);
  const Tensor<Standard> depth = eval::infer(eval::inference_nets(models), img, path);
  io::save_depth(depth, a.out);
  if (!a.viz.empty()) io::save_image(eval::colorize_depth(depth), a.viz);
  return kOk;
}

struct GradArgs {
  std::string op, corrupt;
  bool all = false;
  double tolerance = 1e-4;
};

int gradcheck_cmd(const GradArgs& a) {
  if (a.op.empty() && !a.all) throw ConfigError("gradcheck: pass --all or --op <name>");
  if (!a.op.empty()) {
    const auto names = gradcheck::item_names();
    if (std::find(names.begin(), names.end(), a.op) == names.end()) {
      std::string list;
      for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
      throw ConfigError("gradcheck: unknown op '" + a.op + "' (valid: " + list + ")");
    }
  }
  gradcheck::corrupted_item() = a.corrupt;
  GradCheckOptions opt;
  opt.tolerance = a.tolerance;
  const auto results = gradcheck::run_suite(a.all ? "" : a.op, opt, std::cout);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    if (!r.report.passed) failed.push_back(r.name);
  }
  if (failed.empty()) {
    std::printf("gradcheck: %zu items passed\n", results.size());
    return kOk;
  }
  std::string list;
  for (const auto& n : failed) list += (list.empty() ? "" : ", ") + n;
  return fail("gradcheck", "gradient mismatch in: " + list, kGradFail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-to-real depth adaptation with stereo geometry and twin depth nets, at desk scale."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Render a synthetic stereo corpus (source and domain-shifted target).");
  g->add_option("--config", gen.config, "Run configuration JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output corpus directory")->required();
  g->add_option("--count", gen.count, "Samples per domain (default from config: 100)");
  g->add_option("--seed", gen.seed, "World seed (default from config: 0)");
  g->add_option("--split", gen.split, "train (scene indices from 0) or test (held-out indices)")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one mode: warm-up, then alternation for end-to-end modes.");
  t->add_option("--config", tr.config, "Run configuration JSON (defaults when omitted)")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Training corpus directory")->required();
  t->add_option("--mode", tr.mode, "Training mode: " + valid_mode_list() + " (default from config: GASDA)");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--seed", tr.seed, "Training seed (default from config: 0)");
  t->add_option("--warmup-trans-epochs", tr.warmup_trans, "Translator warm-up epochs (default 10)");
  t->add_option("--warmup-depth-epochs", tr.warmup_depth, "Depth warm-up epochs (default 20)");
  t->add_option("--alt-epochs", tr.alt_total, "Alternation epochs (default 40)");
  t->add_flag("--quiet", tr.quiet, "Do not print per-epoch log rows");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate run directories on a test corpus and write the ablation table.");
  e->add_option("--runs", ev.runs, "Run directories")->required()->expected(1, -1);
  e->add_option("--data", ev.data, "Test corpus directory (gen-data --split test)")->required();
  e->add_option("--caps", ev.caps, "Depth caps in meters")->delimiter(',')->capture_default_str();
  e->add_option("--out", ev.out, "Report CSV path")->required();

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Predict depth for one PPM image with a trained run.");
  i->add_option("--run", in.run, "Run directory")->required();
  i->add_option("--image", in.image, "Input PPM image")->required();
  i->add_option("--out", in.out, "Output PFM depth map")->required();
  i->add_option("--viz", in.viz, "Optional false-colour PPM (near warm, far cool, linear in inverse depth)");
  i->add_option("--path", in.path, "avg, ft or fs (default: the mode's own path)")
      ->check(CLI::IsMember({"avg", "ft", "fs"}));

  GradArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central finite differences.");
  auto* op = c->add_option("--op", gc.op, "Check a single item by name");
  c->add_flag("--all", gc.all, "Check every primitive, geometry op, loss and network")->excludes(op);
  c->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  c->add_option("--corrupt-op", gc.corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return fail("config", ex.what(), kConfig);
  }

  try {
    if (*g) return gen_data(gen);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*i) return infer_cmd(in);
    if (*c) return gradcheck_cmd(gc);
  } catch (const ConfigError& ex) {
    return fail("config", ex.what(), kConfig);
  } catch (const ShapeError& ex) {
    return fail("shape", ex.what(), kConfig);
  } catch (const IoError& ex) {
    return fail("io", ex.what(), kIo);
  } catch (const ParseError& ex) {
    return fail("parse", ex.what(), kIo);
  } catch (const DataError& ex) {
    return fail("data", ex.what(), kData);
  } catch (const NumericError& ex) {
    return fail("numeric", ex.what(), kNumeric);
  }
  return kOk;
}
