#include "vegas/evalharness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "vegas/parallel.hpp"

namespace vegas::eval {

namespace {

constexpr std::uint64_t kEvalStream = 200;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

MaskResult summarize(Mask mask, int correct, int n) {
  MaskResult r;
  r.mask = mask;
  r.n = n;
  r.accuracy = n ? static_cast<double>(correct) / n : 0.0;
  std::tie(r.ci_low, r.ci_high) = wilson_interval(correct, n);
  return r;
}

void fill_deltas(AblationReport& r) {
  auto acc = [&](Mask m) {
    const auto* row = r.find(m);
    return row ? row->accuracy : kNaN;
  };
  r.visual_contribution = acc(Mask::QAV) - acc(Mask::QA);
  r.subtitle_contribution = acc(Mask::QAVS) - acc(Mask::QAV);
  r.shortcut_score = acc(Mask::A) - 0.25;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

std::pair<double, double> wilson_interval(int correct, int n, double z) {
  if (n <= 0) return {0.0, 1.0};
  const double p = static_cast<double>(correct) / n;
  const double z2 = z * z;
  const double denom = 1 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

McqResult eval_mcq(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data, Mask mask,
                   const EvalOptions& opt) {
  if (data.empty()) throw ConfigError("eval_mcq: empty dataset");
  pipeline::ForwardOptions fo;
  fo.mask = mask;
  fo.ordering = opt.ordering;
  fo.selector = opt.selector;
  fo.sampler_mode = topk::Mode::eval;
  fo.hint_with_answer = false;
  fo.use_tam = opt.use_tam;
  McqResult out;
  out.log.resize(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    Tape<float> tape(model.store);
    RngStream rng(opt.seed, {kEvalStream, 0, i});
    auto logits = pipeline::forward_answer(tape, model, data[i], fo, rng).value();
    Eigen::Index arg;
    logits.row(0).maxCoeff(&arg);
    out.log[i] = SampleRecord{data[i].seed_key, mask, static_cast<int>(arg), arg == data[i].answer_idx};
  });
  int correct = 0;
  for (const auto& r : out.log) correct += r.correct ? 1 : 0;
  out.summary = summarize(mask, correct, static_cast<int>(data.size()));
  return out;
}

double recall_at_k(const std::vector<int>& selected, const std::vector<bool>& relevant) {
  int total = 0;
  for (bool b : relevant) total += b ? 1 : 0;
  if (total == 0 || selected.empty()) return 0.0;
  int hit = 0;
  for (int i : selected)
    if (i >= 0 && i < static_cast<int>(relevant.size()) && relevant[static_cast<std::size_t>(i)]) ++hit;
  return static_cast<double>(hit) / std::min<int>(static_cast<int>(selected.size()), total);
}

double kendall_tau(const std::vector<int>& selected) {
  const auto k = selected.size();
  if (k < 2) return 1.0;
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      if (selected[i] < selected[j]) ++concordant;
      else if (selected[i] > selected[j]) ++discordant;
    }
  return static_cast<double>(concordant - discordant) / static_cast<double>(k * (k - 1) / 2);
}

SamplerDiagnostics sampler_diagnostics(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data,
                                       const EvalOptions& opt) {
  SamplerDiagnostics d;
  d.n = static_cast<int>(data.size());
  if (data.empty()) return d;
  std::vector<double> recall(data.size()), tau(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto& s = data[i];
    Tape<float> tape(model.store);
    RngStream rng(opt.seed, {kEvalStream, 1, i});
    auto raw = tape.constant(s.frames);
    auto f_v0 = tam::emulate_encoder(tape, model.store, model.encoder, raw);
    auto hint = lgs::fuse_hint<float>(s.hint);
    topk::TopKConfig cfg{model.dims.k, 0.05, 1, topk::Mode::eval};
    topk::SelectionResult<float> sel;
    lgs::sample_frames(tape, model.scorer, f_v0, hint, cfg, rng, opt.selector, &s.relevant_mask, &sel);
    recall[i] = recall_at_k(sel.indices, s.relevant_mask);
    tau[i] = kendall_tau(sel.indices);
  });
  std::map<std::string, std::pair<double, int>> by_kind;
  double rsum = 0, tsum = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    rsum += recall[i];
    tsum += tau[i];
    auto& slot = by_kind[synth::kind_name(data[i].kind)];
    slot.first += recall[i];
    slot.second += 1;
  }
  d.recall_at_k = rsum / static_cast<double>(data.size());
  d.mean_kendall_tau = tsum / static_cast<double>(data.size());
  for (const auto& [k, v] : by_kind) d.recall_by_kind[k] = v.first / v.second;
  return d;
}

const MaskResult* AblationReport::find(Mask m) const {
  for (const auto& r : rows)
    if (r.mask == m) return &r;
  return nullptr;
}

AblationReport ablation_report(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data,
                               const std::vector<Mask>& masks, const EvalOptions& opt, bool with_diagnostics) {
  if (masks.empty()) throw ConfigError("ablation_report: no masks");
  AblationReport r;
  for (Mask m : masks) {
    auto res = eval_mcq(model, data, m, opt);
    r.rows.push_back(res.summary);
    r.log.insert(r.log.end(), res.log.begin(), res.log.end());
  }
  fill_deltas(r);
  if (with_diagnostics) {
    r.diagnostics = sampler_diagnostics(model, data, opt);
  } else {
    r.diagnostics.recall_at_k = kNaN;
    r.diagnostics.mean_kendall_tau = kNaN;
  }
  return r;
}

void recompute_from_log(AblationReport& report) {
  std::vector<Mask> order;
  std::map<Mask, std::pair<int, int>> counts;
  for (const auto& rec : report.log) {
    if (!counts.count(rec.mask)) order.push_back(rec.mask);
    auto& c = counts[rec.mask];
    c.first += rec.correct ? 1 : 0;
    c.second += 1;
  }
  report.rows.clear();
  for (Mask m : order) report.rows.push_back(summarize(m, counts[m].first, counts[m].second));
  fill_deltas(report);
}

std::string report_csv(const std::vector<AblationReport>& reports) {
  std::string out =
      "run_id,stage,mask,accuracy,ci_low,ci_high,n,visual_contribution,subtitle_contribution,shortcut_score,"
      "recall_at_k,kendall_tau\n";
  for (const auto& r : reports) {
    for (const auto* f : {&r.run_id, &r.stage})
      if (f->find_first_of(",\n\r\"") != std::string::npos) throw ConfigError("report field '" + *f + "' holds a comma, quote or newline");
    for (const auto& row : r.rows) {
      out += r.run_id + ',' + r.stage + ',' + pipeline::mask_name(row.mask) + ',' + fmt(row.accuracy) + ',' +
             fmt(row.ci_low) + ',' + fmt(row.ci_high) + ',' + std::to_string(row.n) + ',' +
             fmt(r.visual_contribution) + ',' + fmt(r.subtitle_contribution) + ',' + fmt(r.shortcut_score) + ',' +
             fmt(r.diagnostics.recall_at_k) + ',' + fmt(r.diagnostics.mean_kendall_tau) + '\n';
    }
  }
  return out;
}

std::string report_summary(const std::vector<AblationReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    out += "run " + r.run_id + " (stage " + r.stage + ")\n";
    for (const auto& row : r.rows)
      out += "  " + pipeline::mask_name(row.mask) + ": accuracy " + fmt(row.accuracy) + " [" + fmt(row.ci_low) + ", " +
             fmt(row.ci_high) + "] n=" + std::to_string(row.n) + "\n";
    out += "  visual contribution " + fmt(r.visual_contribution) + ", subtitle contribution " +
           fmt(r.subtitle_contribution) + ", shortcut score " + fmt(r.shortcut_score) + "\n";
    out += "  sampler recall@k " + fmt(r.diagnostics.recall_at_k) + ", kendall tau " +
           fmt(r.diagnostics.mean_kendall_tau) + "\n";
    for (const auto& [kind, rec] : r.diagnostics.recall_by_kind) out += "    recall " + kind + " " + fmt(rec) + "\n";
  }
  return out;
}

void emit_report(const std::vector<AblationReport>& reports, const std::string& csv_path,
                 const std::string& summary_path) {
  write_text(csv_path, report_csv(reports));
  write_text(summary_path, report_summary(reports));
}

void write_sample_log(const std::string& path, const std::vector<SampleRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    out += "{\"seed_key\":[" + std::to_string(r.seed_key.seed) + ',' + std::to_string(r.seed_key.stream) + ',' +
           std::to_string(r.seed_key.index) + "],\"mask\":\"" + pipeline::mask_name(r.mask) +
           "\",\"chosen\":" + std::to_string(r.chosen) + ",\"correct\":" + (r.correct ? "true" : "false") + "}\n";
  }
  write_text(path, out);
}

std::vector<SampleRecord> read_sample_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<SampleRecord> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      auto j = nlohmann::json::parse(text);
      SampleRecord r;
      const auto& k = j.at("seed_key");
      r.seed_key = synth::SeedKey{k.at(0).get<std::uint64_t>(), k.at(1).get<std::uint64_t>(), k.at(2).get<std::uint64_t>()};
      r.mask = pipeline::parse_mask(j.at("mask").get<std::string>());
      r.chosen = j.at("chosen").get<int>();
      r.correct = j.at("correct").get<bool>();
      out.push_back(r);
    } catch (const std::exception& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

}  // namespace vegas::eval
