#include "vegas/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "vegas/errors.hpp"
#include "vegas/pipeline/checkpoint.hpp"
#include "vegas/verify.hpp"

namespace vegas::experiments {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using clk = std::chrono::steady_clock;

double seconds_since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

const char* kSplits[] = {"lgs_train", "recall_descriptive", "recall_causal", "gift2_train", "test",
                         "biased_train", "biased_test", "ordering_train", "ordering_test"};

std::vector<synth::Scenario>& split(Datasets& d, const std::string& name) {
  if (name == "lgs_train") return d.lgs_train;
  if (name == "recall_descriptive") return d.recall_descriptive;
  if (name == "recall_causal") return d.recall_causal;
  if (name == "gift2_train") return d.gift2_train;
  if (name == "test") return d.test;
  if (name == "biased_train") return d.biased_train;
  if (name == "biased_test") return d.biased_test;
  if (name == "ordering_train") return d.ordering_train;
  return d.ordering_test;
}

bool same_scenarios(const std::vector<synth::Scenario>& a, const std::vector<synth::Scenario>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    // 9 significant digits are injective on float32, so equal text means equal elements
    if (synth::scenario_to_json(a[i]) != synth::scenario_to_json(b[i])) return false;
    if (a[i].frames != b[i].frames) return false;
  }
  return true;
}

bool same_emotion(const std::vector<synth::EmotionSample>& a, const std::vector<synth::EmotionSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].feature != b[i].feature || a[i].label != b[i].label || a[i].concept_id != b[i].concept_id) return false;
  return true;
}

bool same_datasets(const Datasets& x, const Datasets& y) {
  auto& a = const_cast<Datasets&>(x);
  auto& b = const_cast<Datasets&>(y);
  for (const char* s : kSplits)
    if (!same_scenarios(split(a, s), split(b, s))) return false;
  return same_emotion(a.gift1_train, b.gift1_train) && same_emotion(a.gift1_test, b.gift1_test);
}

std::string train_log_csv(const std::vector<pipeline::TrainLogRow>& rows) {
  std::ostringstream out;
  out << "step,loss,lr,wall_ms\n";
  for (const auto& r : rows) out << r.step << ',' << fmt(r.loss) << ',' << r.lr << ',' << fmt(r.wall_ms) << '\n';
  return out.str();
}

// checkpoint after a stage; returns whether a save/load round trip is bit-exact
bool save_stage(const pipeline::Model<float>& model, const config::RunConfig& cfg, pipeline::Stage stage,
                int step, std::uint64_t seed, const fs::path& path) {
  pipeline::CheckpointMeta meta{pipeline::stage_name(stage), step, seed, pipeline::hash_hex(config::config_hash(cfg))};
  auto ckpt = pipeline::make_checkpoint(model, meta);
  fs::create_directories(path.parent_path());
  pipeline::save_checkpoint(path.string(), ckpt);
  auto back = pipeline::load_checkpoint(path.string());
  if (pipeline::encode_checkpoint(back) != pipeline::encode_checkpoint(ckpt)) return false;
  auto copy = pipeline::build_model<float>(model.dims, 0);
  pipeline::apply_checkpoint(copy, back);
  auto it = copy.store.begin();
  for (const auto& e : model.store) {
    if (e.value != it->value || e.m != it->m || e.v != it->v) return false;
    ++it;
  }
  return true;
}

AcceptanceRow row(int criterion, std::string name, double value, std::string op, double lo, double hi = 0) {
  AcceptanceRow r{criterion, std::move(name), value, std::move(op), lo, hi, false};
  if (r.op == ">=") r.pass = value >= lo;
  else if (r.op == "<=") r.pass = value <= lo;
  else if (r.op == "<") r.pass = value < lo;
  else if (r.op == "in") r.pass = value >= lo && value <= hi;
  else throw ConfigError("acceptance: unknown comparison " + r.op);
  return r;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return RngStream(seed, {h, 0, 0}).next_u64() >> 16;
}

synth::PrototypeBank make_bank(const config::RunConfig& cfg) {
  return synth::gen_prototypes(config::bank_config(cfg), cfg.data.bank_seed);
}

Datasets make_datasets(const config::RunConfig& cfg, const synth::PrototypeBank& bank) {
  const auto gc = config::gen_config(cfg);
  const auto& r = cfg.repro;
  const auto s = [&](const char* tag) { return derive_seed(cfg.seed, tag); };
  Datasets d;
  d.lgs_train = synth::gen_mixed(bank, gc, r.lgs_train, s("data.lgs"));
  d.recall_descriptive = synth::gen_dataset(bank, gc, synth::Kind::descriptive, r.recall_test, s("data.recall"));
  d.recall_causal = synth::gen_dataset(bank, gc, synth::Kind::causal, r.recall_test, s("data.recall"));
  d.gift1_train = synth::gen_emotion_dataset(bank, gc.noise_std, r.gift1_train, s("data.gift1"));
  d.gift1_test = synth::gen_emotion_dataset(bank, gc.noise_std, r.gift1_test, s("data.gift1_test"));
  d.gift2_train = synth::gen_mixed(bank, gc, r.gift2_train, s("data.gift2"));
  d.test = synth::gen_mixed(bank, gc, r.test, s("data.test"));
  auto biased = gc;
  biased.p_bias = r.baseline_p_bias;
  d.biased_train = synth::gen_mixed(bank, biased, r.gift2_train, s("data.biased"));
  d.biased_test = synth::gen_mixed(bank, biased, r.test, s("data.biased_test"));
  d.ordering_train = synth::gen_dataset(bank, gc, synth::Kind::ordering, r.ordering_train, s("data.ordering"));
  d.ordering_test = synth::gen_dataset(bank, gc, synth::Kind::ordering, r.ordering_test, s("data.ordering_test"));
  return d;
}

void write_datasets(const std::string& dir, const Datasets& d, const config::RunConfig& cfg) {
  const fs::path root(dir);
  fs::create_directories(root);
  auto& dd = const_cast<Datasets&>(d);
  json counts = json::object();
  for (const char* s : kSplits) {
    synth::write_dataset((root / (std::string(s) + ".jsonl")).string(), split(dd, s));
    counts[s] = split(dd, s).size();
  }
  synth::write_emotion_dataset((root / "gift1_train.jsonl").string(), d.gift1_train);
  synth::write_emotion_dataset((root / "gift1_test.jsonl").string(), d.gift1_test);
  counts["gift1_train"] = d.gift1_train.size();
  counts["gift1_test"] = d.gift1_test.size();
  json manifest{{"seed", cfg.seed},
                {"bank_seed", cfg.data.bank_seed},
                {"config_hash", pipeline::hash_hex(config::config_hash(cfg))},
                {"counts", counts}};
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

Datasets read_datasets(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json")) throw IoError("no manifest.json in " + dir);
  Datasets d;
  for (const char* s : kSplits) split(d, s) = synth::read_dataset((root / (std::string(s) + ".jsonl")).string());
  d.gift1_train = synth::read_emotion_dataset((root / "gift1_train.jsonl").string());
  d.gift1_test = synth::read_emotion_dataset((root / "gift1_test.jsonl").string());
  return d;
}

RecallResult lgs_recall(const pipeline::Model<float>& model, const Datasets& d, std::uint64_t seed) {
  eval::EvalOptions eo;
  eo.seed = seed;
  RecallResult r;
  r.descriptive = eval::sampler_diagnostics(model, d.recall_descriptive, eo).recall_at_k;
  r.causal = eval::sampler_diagnostics(model, d.recall_causal, eo).recall_at_k;
  eo.selector = lgs::Selector::uniform;
  r.uniform_descriptive = eval::sampler_diagnostics(model, d.recall_descriptive, eo).recall_at_k;
  r.uniform_causal = eval::sampler_diagnostics(model, d.recall_causal, eo).recall_at_k;
  return r;
}

TamResult tam_experiment(const config::RunConfig& cfg, const synth::PrototypeBank& bank, const Datasets& d) {
  TamResult out;
  out.n = static_cast<int>(d.ordering_test.size());
  for (bool tam : {true, false}) {
    auto model = pipeline::build_model<float>(cfg.dims, derive_seed(cfg.seed, "tam.model"));
    auto sc = config::stage_config(cfg, pipeline::Stage::mcq);
    sc.selector = lgs::Selector::uniform;
    sc.use_tam = tam;
    sc.masks = {{pipeline::Mask::QAV, 1.0}};
    if (!tam) sc.lr.erase("tam");
    pipeline::TrainState st;
    pipeline::train_stage(model, d.ordering_train, bank, sc, derive_seed(cfg.seed, "tam.train"), st);
    eval::EvalOptions eo;
    eo.selector = lgs::Selector::uniform;
    eo.use_tam = tam;
    const double acc = eval::eval_mcq(model, d.ordering_test, pipeline::Mask::QAV, eo).summary.accuracy;
    (tam ? out.with_tam : out.without_tam) = acc;
  }
  return out;
}

std::string acceptance_csv(const std::vector<AcceptanceRow>& rows) {
  std::ostringstream out;
  out << "criterion,name,value,op,lo,hi,pass\n";
  for (const auto& r : rows)
    out << r.criterion << ',' << r.name << ',' << fmt(r.value) << ',' << r.op << ',' << fmt(r.lo) << ','
        << fmt(r.hi) << ',' << (r.pass ? "PASS" : "FAIL") << '\n';
  return out.str();
}

ReproResult run_repro(const config::RunConfig& cfg, bool with_gradchecks) {
  cfg.validate();
  ReproResult res;
  const fs::path ckdir(cfg.paths.checkpoints), repdir(cfg.paths.reports);
  fs::create_directories(ckdir);
  fs::create_directories(repdir);
  auto t = clk::now();
  auto lap = [&](const std::string& name) {
    res.timings.emplace_back(name, seconds_since(t));
    t = clk::now();
  };

  if (with_gradchecks) {
    verify::SuiteOptions so;
    so.seed = derive_seed(cfg.seed, "gradcheck");
    double worst = 0;
    for (const auto& c : verify::check_diffcore(so)) worst = std::max(worst, c.max_rel_err);
    res.acceptance.push_back(row(1, "diffcore_max_rel_err", worst, "<=", 1e-5));
    lap("gradcheck_diffcore");
    for (const auto& c : verify::check_ptopk(so)) {
      if (c.op == "forward_oracle") res.acceptance.push_back(row(2, "topk_forward_abs_err", c.max_rel_err, "<=", c.tol));
      else if (c.op == "two_frame_closed_form")
        res.acceptance.push_back(row(3, "topk_closed_form_abs_err", c.max_rel_err, "<=", c.tol));
      else if (c.op == "full_chain") res.acceptance.push_back(row(3, "topk_chain_rel_err", c.max_rel_err, "<=", c.tol));
      else if (c.op == "structural_invariants")
        res.acceptance.push_back(row(4, "topk_invariant_violations", c.max_rel_err, "<=", 0));
    }
    lap("gradcheck_ptopk");
  }

  const auto bank = make_bank(cfg);
  {
    auto made = make_datasets(cfg, bank);
    write_datasets(cfg.paths.data, made, cfg);
    auto back = read_datasets(cfg.paths.data);
    res.acceptance.push_back(row(9, "dataset_round_trip_identical", same_datasets(made, back) ? 1 : 0, ">=", 1));
  }
  // everything downstream trains on what was read back from disk
  const Datasets d = read_datasets(cfg.paths.data);
  lap("datasets");

  bool ckpt_ok = true;
  auto model = pipeline::build_model<float>(cfg.dims, derive_seed(cfg.seed, "model"));
  pipeline::TrainState st;
  {
    const auto seed = derive_seed(cfg.seed, "train.lgs");
    auto log = pipeline::train_stage(model, d.lgs_train, bank, config::stage_config(cfg, pipeline::Stage::lgs), seed, st);
    write_text(repdir / "train_lgs.csv", train_log_csv(log));
    ckpt_ok &= save_stage(model, cfg, pipeline::Stage::lgs, st.step, seed, ckdir / "lgs.ckpt");
  }
  lap("train_lgs");
  res.recall = lgs_recall(model, d, derive_seed(cfg.seed, "eval"));
  res.acceptance.push_back(row(5, "recall_descriptive", res.recall.descriptive, ">=", 0.9));
  res.acceptance.push_back(row(5, "recall_causal", res.recall.causal, ">=", 0.85));
  {
    // uniform control against its hypergeometric mean k|R|/n / min(k,|R|)
    const auto expected = [&](const std::vector<synth::Scenario>& data) {
      double sum = 0;
      for (const auto& s : data) {
        const auto rel = static_cast<double>(std::count(s.relevant_mask.begin(), s.relevant_mask.end(), true));
        const double k = cfg.dims.k, n = static_cast<double>(s.relevant_mask.size());
        sum += k * rel / n / std::min(k, rel);
      }
      return data.empty() ? 0.0 : sum / static_cast<double>(data.size());
    };
    const double ed = expected(d.recall_descriptive), ec = expected(d.recall_causal);
    res.acceptance.push_back(
        row(5, "recall_uniform_descriptive", res.recall.uniform_descriptive, "in", ed - 0.03, ed + 0.03));
    res.acceptance.push_back(row(5, "recall_uniform_causal", res.recall.uniform_causal, "in", ec - 0.03, ec + 0.03));
  }
  lap("eval_recall");

  {
    const auto seed = derive_seed(cfg.seed, "train.gift1");
    auto log = pipeline::train_stage_gift1(model, d.gift1_train, config::stage_config(cfg, pipeline::Stage::gift1),
                                           seed, st);
    write_text(repdir / "train_gift1.csv", train_log_csv(log));
    ckpt_ok &= save_stage(model, cfg, pipeline::Stage::gift1, st.step, seed, ckdir / "gift1.ckpt");
    res.emotion_accuracy = pipeline::eval_emotion(model, d.gift1_test).accuracy;
  }
  lap("train_gift1");

  const auto g2seed = derive_seed(cfg.seed, "train.gift2");
  const auto evseed = derive_seed(cfg.seed, "eval");
  auto reports_for = [&](const pipeline::Model<float>& m, const std::string& id, bool diag) {
    for (auto ord : {pipeline::Ordering::order1, pipeline::Ordering::order2}) {
      eval::EvalOptions eo;
      eo.ordering = ord;
      eo.seed = evseed;
      auto r = eval::ablation_report(m, d.test, eval::kAllMasks, eo, diag && ord == pipeline::Ordering::order1);
      r.run_id = id + (ord == pipeline::Ordering::order1 ? ".order1" : ".order2");
      r.stage = "gift2";
      res.reports.push_back(std::move(r));
    }
  };

  // single-ordering control, branched from the same post-gift1 weights
  auto control = model;
  {
    auto sc = config::stage_config(cfg, pipeline::Stage::gift2);
    sc.ordering = pipeline::OrderPolicy::order1;
    pipeline::TrainState cs = st;
    pipeline::train_stage(control, d.gift2_train, bank, sc, g2seed, cs);
  }
  lap("train_gift2_single");

  {
    auto log = pipeline::train_stage(model, d.gift2_train, bank, config::stage_config(cfg, pipeline::Stage::gift2),
                                     g2seed, st);
    write_text(repdir / "train_gift2.csv", train_log_csv(log));
    ckpt_ok &= save_stage(model, cfg, pipeline::Stage::gift2, st.step, g2seed, ckdir / "gift2.ckpt");
  }
  lap("train_gift2");
  reports_for(model, "dual", true);
  reports_for(control, "single", false);
  lap("eval_gift2");

  {
    auto base = pipeline::build_model<float>(cfg.dims, derive_seed(cfg.seed, "baseline.model"));
    auto sc = config::stage_config(cfg, pipeline::Stage::gift2);
    sc.selector = lgs::Selector::uniform;
    pipeline::TrainState bs;
    pipeline::train_stage(base, d.biased_train, bank, sc, derive_seed(cfg.seed, "baseline.train"), bs);
    eval::EvalOptions eo;
    eo.selector = lgs::Selector::uniform;
    eo.seed = evseed;
    auto r = eval::ablation_report(base, d.biased_test, eval::kAllMasks, eo, false);
    r.run_id = "uniform_biased.order1";
    r.stage = "gift2";
    res.reports.push_back(std::move(r));
  }
  lap("baseline");

  res.tam = tam_experiment(cfg, bank, d);
  res.acceptance.push_back(row(6, "tam_accuracy", res.tam.with_tam, ">=", 0.9));
  res.acceptance.push_back(row(6, "no_tam_accuracy", res.tam.without_tam, "<=", 0.65));
  lap("tam");

  const auto& full = res.reports[0];
  const auto& full2 = res.reports[1];
  const auto& single = res.reports[2];
  const auto& single2 = res.reports[3];
  const auto& baseline = res.reports[4];
  res.acceptance.push_back(row(7, "visual_contribution", full.visual_contribution, ">=", 0.30));
  {
    // 99% binomial interval around chance for the held-out set size
    const auto* qa = full.find(pipeline::Mask::QA);
    const double half = 2.576 * std::sqrt(0.25 * 0.75 / qa->n);
    res.acceptance.push_back(row(7, "qa_accuracy_chance", qa->accuracy, "in", 0.25 - half, 0.25 + half));
  }
  res.acceptance.push_back(row(7, "baseline_visual_contribution", baseline.visual_contribution, "<=", 0.05));
  res.acceptance.push_back(row(7, "baseline_shortcut_score", baseline.shortcut_score, ">=", 0.30));
  {
    const auto gap = [](const eval::AblationReport& a, const eval::AblationReport& b) {
      return std::abs(a.find(pipeline::Mask::QAVS)->accuracy - b.find(pipeline::Mask::QAVS)->accuracy);
    };
    const double dual = gap(full, full2), ctl = gap(single, single2);
    res.acceptance.push_back(row(8, "dual_order_gap", dual, "<=", 0.03));
    res.acceptance.push_back(row(8, "dual_minus_single_gap", dual - ctl, "<", 0));
  }
  res.acceptance.push_back(row(9, "checkpoint_round_trip_exact", ckpt_ok ? 1 : 0, ">=", 1));

  eval::emit_report(res.reports, (repdir / "report.csv").string(), (repdir / "summary.txt").string());
  write_text(repdir / "acceptance.csv", acceptance_csv(res.acceptance));
  {
    std::ostringstream extra;
    extra << "recall_descriptive," << fmt(res.recall.descriptive) << '\n'
          << "recall_causal," << fmt(res.recall.causal) << '\n'
          << "recall_uniform_descriptive," << fmt(res.recall.uniform_descriptive) << '\n'
          << "recall_uniform_causal," << fmt(res.recall.uniform_causal) << '\n'
          << "emotion_accuracy," << fmt(res.emotion_accuracy) << '\n'
          << "tam_accuracy," << fmt(res.tam.with_tam) << '\n'
          << "no_tam_accuracy," << fmt(res.tam.without_tam) << '\n';
    write_text(repdir / "metrics.csv", "metric,value\n" + extra.str());
  }
  lap("reports");
  std::ostringstream tim;
  tim << "phase,seconds\n";
  for (const auto& [name, secs] : res.timings) tim << name << ',' << fmt(secs) << '\n';
  write_text(repdir / "timings.csv", tim.str());
  return res;
}

}  // namespace vegas::experiments
