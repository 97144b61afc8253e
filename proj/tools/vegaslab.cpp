// vegaslab: data generation, staged training, evaluation, gradient checks and
// the end-to-end repro run. Exit codes: 0 ok, 1 I/O, 2 config or usage,
// 3 resume mismatch, 4 verification failure.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vegas/config.hpp"
#include "vegas/errors.hpp"
#include "vegas/evalharness.hpp"
#include "vegas/experiments.hpp"
#include "vegas/pipeline/checkpoint.hpp"
#include "vegas/verify.hpp"

namespace fs = std::filesystem;
using namespace vegas;

namespace {

constexpr int kIo = 1, kUsage = 2, kMismatch = 3, kVerify = 4;

config::RunConfig get_config(const std::string& path) {
  return path.empty() ? config::default_config() : config::load_config(path);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// Held for the lifetime of a command that writes checkpoints into `dir`.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".vegaslab.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw IoError("checkpoint directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    const auto pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::vector<pipeline::Mask> parse_masks(const std::string& text) {
  std::vector<pipeline::Mask> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(pipeline::parse_mask(item));
  if (out.empty()) throw ConfigError("--masks lists no mask");
  return out;
}

lgs::Selector parse_selector(const std::string& s) {
  if (s == "perturbed") return lgs::Selector::perturbed;
  if (s == "uniform") return lgs::Selector::uniform;
  if (s == "oracle") return lgs::Selector::oracle;
  throw ConfigError("selector must be perturbed, uniform or oracle, got '" + s + "'");
}

// --- gen

struct GenArgs {
  std::string kind = "mixed";
  int count = 0;
  std::uint64_t seed = 7;
  std::string out;
  std::string config;
};

void cmd_gen(const GenArgs& a) {
  auto cfg = get_config(a.config);
  if (a.count < 0) throw ConfigError("--count must be >= 0");
  const auto bank = experiments::make_bank(cfg);
  const auto gc = config::gen_config(cfg);
  if (a.kind == "emotion") {
    synth::write_emotion_dataset(a.out, synth::gen_emotion_dataset(bank, gc.noise_std, a.count, a.seed));
  } else if (a.kind == "mixed") {
    synth::write_dataset(a.out, synth::gen_mixed(bank, gc, a.count, a.seed));
  } else {
    synth::write_dataset(a.out, synth::gen_dataset(bank, gc, synth::parse_kind(a.kind), a.count, a.seed));
  }
  nlohmann::json manifest{{"kind", a.kind},
                          {"count", a.count},
                          {"seed", a.seed},
                          {"bank_seed", cfg.data.bank_seed},
                          {"config_hash", pipeline::hash_hex(config::config_hash(cfg))}};
  write_file(a.out + ".manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote %d samples to %s\n", a.count, a.out.c_str());
}

// --- train

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string data;
  std::string resume;
  std::string out;
  std::string log;
  int max_steps = -1;
};

void cmd_train(const TrainArgs& a) {
  auto cfg = get_config(a.config);
  const auto stage = pipeline::parse_stage(a.stage);
  const fs::path out = a.out.empty() ? fs::path(cfg.paths.checkpoints) / (a.stage + ".ckpt") : fs::path(a.out);
  const fs::path log = a.log.empty() ? fs::path(cfg.paths.reports) / ("train_" + a.stage + ".csv") : fs::path(a.log);
  const auto hash = pipeline::hash_hex(config::config_hash(cfg));

  auto model = pipeline::build_model<float>(cfg.dims, experiments::derive_seed(cfg.seed, "model"));
  pipeline::TrainState st;
  if (!a.resume.empty()) {
    auto ckpt = pipeline::load_checkpoint(a.resume);
    if (ckpt.meta.config_hash != hash)
      throw ResumeMismatchError("checkpoint " + a.resume + " was written under config " + ckpt.meta.config_hash +
                                ", active config is " + hash);
    pipeline::apply_checkpoint(model, ckpt);
    st.stage = pipeline::parse_stage(ckpt.meta.stage);
    st.step = ckpt.meta.step;
  }

  DirLock lock(out.has_parent_path() ? out.parent_path() : fs::path("."));
  auto sc = config::stage_config(cfg, stage);
  sc.max_steps = a.max_steps;
  const auto seed = experiments::derive_seed(cfg.seed, "train." + a.stage);
  std::vector<pipeline::TrainLogRow> rows;
  if (stage == pipeline::Stage::gift1) {
    rows = pipeline::train_stage_gift1(model, synth::read_emotion_dataset(a.data), sc, seed, st);
  } else {
    rows = pipeline::train_stage(model, synth::read_dataset(a.data), experiments::make_bank(cfg), sc, seed, st);
  }

  std::ostringstream csv;
  csv << "step,loss,lr,wall_ms\n";
  for (const auto& r : rows) csv << r.step << ',' << r.loss << ',' << r.lr << ',' << r.wall_ms << '\n';
  write_file(log, csv.str());
  pipeline::save_checkpoint(out.string(), pipeline::make_checkpoint(model, {a.stage, st.step, seed, hash}));
  std::printf("stage %s: %zu steps this run, step %d total, final loss %.4f\n", a.stage.c_str(), rows.size(), st.step,
              rows.empty() ? 0.0 : rows.back().loss);

  if (stage == pipeline::Stage::lgs) {
    const auto bank = experiments::make_bank(cfg);
    const auto gc = config::gen_config(cfg);
    experiments::Datasets held;
    const auto rs = experiments::derive_seed(cfg.seed, "data.recall");
    held.recall_descriptive = synth::gen_dataset(bank, gc, synth::Kind::descriptive, cfg.repro.recall_test, rs);
    held.recall_causal = synth::gen_dataset(bank, gc, synth::Kind::causal, cfg.repro.recall_test, rs);
    auto r = experiments::lgs_recall(model, held, experiments::derive_seed(cfg.seed, "eval"));
    std::printf("recall@%d descriptive %.4f causal %.4f (uniform %.4f / %.4f)\n", cfg.dims.k, r.descriptive,
                r.causal, r.uniform_descriptive, r.uniform_causal);
  } else if (stage == pipeline::Stage::gift1) {
    std::printf("emotion accuracy (train split) %.4f\n",
                pipeline::eval_emotion(model, synth::read_emotion_dataset(a.data)).accuracy);
  }
  std::printf("checkpoint %s, log %s\n", out.c_str(), log.c_str());
}

// --- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string masks = "A,QA,QAV,QAVS";
  std::string config;
  std::string out;
  std::string ordering = "order1";
  std::string selector = "perturbed";
};

void cmd_eval(const EvalArgs& a) {
  auto cfg = get_config(a.config);
  const auto masks = parse_masks(a.masks);
  eval::EvalOptions eo;
  if (a.ordering == "order2") eo.ordering = pipeline::Ordering::order2;
  else if (a.ordering != "order1") throw ConfigError("--ordering must be order1 or order2");
  eo.selector = parse_selector(a.selector);
  eo.seed = experiments::derive_seed(cfg.seed, "eval");

  auto ckpt = pipeline::load_checkpoint(a.ckpt);
  auto model = pipeline::build_model<float>(cfg.dims, 0);
  pipeline::apply_checkpoint(model, ckpt);
  const auto data = synth::read_dataset(a.data);

  auto report = eval::ablation_report(model, data, masks, eo, true);
  report.run_id = fs::path(a.ckpt).stem().string() + "." + a.ordering;
  report.stage = ckpt.meta.stage;
  const fs::path dir = a.out.empty() ? fs::path(cfg.paths.reports) : fs::path(a.out);
  fs::create_directories(dir);
  eval::emit_report({report}, (dir / "report.csv").string(), (dir / "summary.txt").string());
  eval::write_sample_log((dir / "samples.jsonl").string(), report.log);
  std::fputs(eval::report_summary({report}).c_str(), stdout);
  std::printf("recall@k %.4f  kendall_tau %.4f  (n=%d)\n", report.diagnostics.recall_at_k,
              report.diagnostics.mean_kendall_tau, report.diagnostics.n);
}

// --- gradcheck

struct GradArgs {
  std::string module = "all";
  int trials = 20;
  bool corrupt = false;
  std::uint64_t seed = 2024;
};

int cmd_gradcheck(const GradArgs& a) {
  verify::SuiteOptions so;
  so.trials = a.trials;
  so.corrupt = a.corrupt;
  so.seed = a.seed;
  std::vector<std::string> failed;
  for (const auto& r : verify::run_suites(a.module, so)) {
    std::printf("%-8s %-26s err %-10.3g tol %-8.0e %s  %s\n", r.module.c_str(), r.op.c_str(), r.max_rel_err, r.tol,
                r.passed ? "ok" : "FAIL", r.detail.c_str());
    std::fflush(stdout);
    if (!r.passed) failed.push_back(r.module + "." + r.op);
  }
  if (failed.empty()) return 0;
  std::fprintf(stderr, "gradcheck failed:");
  for (const auto& f : failed) std::fprintf(stderr, " %s", f.c_str());
  std::fprintf(stderr, "\n");
  return kVerify;
}

// --- repro

struct ReproArgs {
  std::string config;
  bool skip_gradchecks = false;
};

int cmd_repro(const ReproArgs& a) {
  auto cfg = get_config(a.config);
  DirLock lock(cfg.paths.checkpoints);
  auto res = experiments::run_repro(cfg, !a.skip_gradchecks);
  std::fputs(eval::report_summary(res.reports).c_str(), stdout);
  bool ok = true;
  for (const auto& r : res.acceptance) {
    std::printf("criterion %d %-30s %.4f %s %g%s  %s\n", r.criterion, r.name.c_str(), r.value, r.op.c_str(), r.lo,
                r.op == "in" ? (" " + std::to_string(r.hi)).c_str() : "", r.pass ? "PASS" : "FAIL");
    ok &= r.pass;
  }
  for (const auto& [name, secs] : res.timings) std::printf("time %-20s %.1fs\n", name.c_str(), secs);
  return ok ? 0 : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vegaslab: language-guided frame sampling lab"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset file and its manifest");
  g->add_option("--kind", gen.kind, "descriptive, causal, nuanced, ordering, mixed or emotion")->capture_default_str();
  g->add_option("--count", gen.count, "Number of samples")->required();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output .jsonl path (manifest goes to <out>.manifest.json)")->required();
  g->add_option("--config", gen.config, "Config file (bank and generator settings)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run one training stage and write a checkpoint");
  t->add_option("--stage", train.stage, "lgs, gift1, gift2 or mcq")->required();
  t->add_option("--config", train.config, "Config file (defaults when omitted)");
  t->add_option("--data", train.data, "Training data (.jsonl; emotion samples for gift1)")->required();
  t->add_option("--resume", train.resume,
                "Start from this checkpoint; same stage continues at its step, another stage starts over");
  t->add_option("--out", train.out, "Checkpoint path (default <checkpoints>/<stage>.ckpt)");
  t->add_option("--log", train.log, "Training log CSV (default <reports>/train_<stage>.csv)");
  t->add_option("--max-steps", train.max_steps, "Stop after this many total steps in the stage");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Modality ablation report for a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Evaluation data (.jsonl)")->required();
  e->add_option("--masks", ev.masks, "Comma-separated masks")->capture_default_str();
  e->add_option("--config", ev.config, "Config file (model dims, seed, report path)");
  e->add_option("--out", ev.out, "Report directory (default <reports>)");
  e->add_option("--ordering", ev.ordering, "order1 or order2")->capture_default_str();
  e->add_option("--selector", ev.selector, "perturbed, uniform or oracle")->capture_default_str();

  GradArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient suites in f64");
  c->add_option("--module", gc.module, "diffcore, ptopk, tam, lgs or all")->capture_default_str();
  c->add_option("--trials", gc.trials, "Trials per op; instances or directions for the Monte-Carlo checks")
      ->capture_default_str();
  c->add_flag("--corrupt", gc.corrupt, "Double every analytic gradient (the suites must then fail)");
  c->add_option("--seed", gc.seed, "Seed")->capture_default_str();

  ReproArgs rp;
  auto* r = app.add_subcommand("repro", "gen, train lgs/gift1/gift2, eval, controls and acceptance report");
  r->add_option("--config", rp.config, "Config file (defaults when omitted)");
  r->add_flag("--skip-gradchecks", rp.skip_gradchecks, "Leave out the gradient and top-k oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*g) cmd_gen(gen);
    else if (*t) cmd_train(train);
    else if (*e) cmd_eval(ev);
    else if (*c) return cmd_gradcheck(gc);
    else if (*r) return cmd_repro(rp);
    return 0;
  } catch (const ResumeMismatchError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kMismatch;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\nrun with --help for usage\n", err.what());
    return kUsage;
  } catch (const IoError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kIo;
  } catch (const FormatError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kIo;
  } catch (const ParseError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kIo;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  }
}
