#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vegas/errors.hpp"
#include "vegas/evalharness.hpp"
#include "vegas/synthworld/generators.hpp"

using namespace vegas;
using namespace vegas::eval;
namespace fs = std::filesystem;

namespace {

const synth::PrototypeBank& bank() {
  static const auto b = synth::gen_prototypes({}, 1);
  return b;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vegas_eval_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, sep);) out.push_back(f);
  return out;
}

}  // namespace

// -------------------------------------------------------------- primitives

TEST(RecallAtK, CountsOverlapOverMinOfKAndRelevant) {
  std::vector<bool> rel(10, false);
  for (int i : {1, 2, 3}) rel[static_cast<std::size_t>(i)] = true;
  EXPECT_DOUBLE_EQ(recall_at_k({1, 2, 3, 7}, rel), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k({1, 5}, rel), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k({0, 4, 5}, rel), 0.0);
}

TEST(KendallTau, AscendingDescendingAndMixed) {
  EXPECT_DOUBLE_EQ(kendall_tau({1, 4, 9}), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau({9, 4, 1}), -1.0);
  EXPECT_NEAR(kendall_tau({1, 9, 4}), 1.0 / 3.0, 1e-12);
}

TEST(Wilson, MatchesClosedForm) {
  // 50 of 100 at z=1.96: centre 0.5, half-width z*sqrt(.25/100+z^2/4e4)/(1+z^2/100)
  const double z = 1.96, n = 100;
  const double half = z * std::sqrt(0.25 / n + z * z / (4 * n * n)) / (1 + z * z / n);
  auto [lo, hi] = wilson_interval(50, 100);
  EXPECT_NEAR(lo, 0.5 - half, 1e-12);
  EXPECT_NEAR(hi, 0.5 + half, 1e-12);
  auto [lo0, hi0] = wilson_interval(0, 20);
  EXPECT_EQ(lo0, 0.0);
  EXPECT_GT(hi0, 0.1);
  auto [lo1, hi1] = wilson_interval(20, 20);
  EXPECT_LT(lo1, 0.9);
  EXPECT_NEAR(hi1, 1.0, 1e-12);
}

// ------------------------------------------------------------ diagnostics

TEST(Diagnostics, OracleSelectorHasPerfectRecallAndOrder) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 100, 3);
  EvalOptions opt;
  opt.selector = lgs::Selector::oracle;
  auto d = sampler_diagnostics(model, data, opt);
  EXPECT_DOUBLE_EQ(d.recall_at_k, 1.0);
  EXPECT_DOUBLE_EQ(d.mean_kendall_tau, 1.0);
  EXPECT_EQ(d.n, 100);
}

TEST(Diagnostics, EvalSelectionIsAlwaysInTimeOrder) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 60, 4);
  for (auto sel : {lgs::Selector::perturbed, lgs::Selector::uniform}) {
    EvalOptions opt;
    opt.selector = sel;
    EXPECT_DOUBLE_EQ(sampler_diagnostics(model, data, opt).mean_kendall_tau, 1.0);
  }
}

// ---------------------------------------------------------------- accuracy

TEST(Mcq, UntrainedModelIsAtChance) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 2000, 5);
  for (auto mask : {Mask::QA, Mask::QAV}) {
    auto r = eval_mcq(model, data, mask);
    EXPECT_EQ(r.summary.n, 2000);
    EXPECT_NEAR(r.summary.accuracy, 0.25, 0.03) << pipeline::mask_name(mask);
  }
}

TEST(Mcq, SubtitleMaskNeedsSubtitles) {
  auto model = pipeline::build_model<float>({}, 3);
  synth::GenConfig gc;
  gc.subtitle_len = 0;
  auto data = synth::gen_dataset(bank(), gc, synth::Kind::descriptive, 4, 5);
  EXPECT_THROW(eval_mcq(model, data, Mask::QAVS), InputError);
}

// ----------------------------------------------------------------- reports

TEST(Report, DeltasRecomputedFromLogMatch) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 200, 6);
  auto rep = ablation_report(model, data, kAllMasks, {}, false);
  ASSERT_EQ(rep.rows.size(), 4u);
  auto copy = rep;
  copy.visual_contribution = copy.subtitle_contribution = copy.shortcut_score = -99;
  for (auto& r : copy.rows) r.accuracy = -1;
  recompute_from_log(copy);
  EXPECT_EQ(copy.visual_contribution, rep.visual_contribution);
  EXPECT_EQ(copy.subtitle_contribution, rep.subtitle_contribution);
  EXPECT_EQ(copy.shortcut_score, rep.shortcut_score);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(copy.rows[i].accuracy, rep.rows[i].accuracy);
  EXPECT_DOUBLE_EQ(rep.visual_contribution, rep.find(Mask::QAV)->accuracy - rep.find(Mask::QA)->accuracy);
}

TEST(Report, SingleMaskLeavesDeltasUndefined) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 20, 6);
  auto rep = ablation_report(model, data, {Mask::QA}, {}, false);
  EXPECT_EQ(rep.rows.size(), 1u);
  EXPECT_TRUE(std::isnan(rep.visual_contribution));
}

TEST(Report, EmptyListGivesHeaderOnly) {
  auto csv = report_csv({});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(csv.rfind("run_id,", 0), 0u);
}

TEST(Report, EveryRowHasHeaderWidth) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 40, 6);
  auto rep = ablation_report(model, data, kAllMasks, {}, true);
  rep.run_id = "run.a";
  rep.stage = "gift2";
  auto csv = report_csv({rep, rep});
  std::stringstream ss(csv);
  std::string header;
  std::getline(ss, header);
  const auto width = split(header, ',').size();
  int rows = 0;
  for (std::string line; std::getline(ss, line); ++rows) EXPECT_EQ(split(line, ',').size(), width) << line;
  EXPECT_EQ(rows, 8);
}

TEST(Report, CommaInRunIdRejected) {
  AblationReport rep;
  rep.run_id = "a,b";
  EXPECT_THROW(report_csv({rep}), ConfigError);
}

TEST(Report, SameInputsSameBytes) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 40, 6);
  auto a = ablation_report(model, data), b = ablation_report(model, data);
  a.run_id = b.run_id = "x";
  auto p1 = temp_file("a.csv"), p2 = temp_file("b.csv");
  emit_report({a}, p1.string(), temp_file("a.txt").string());
  emit_report({b}, p2.string(), temp_file("b.txt").string());
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  EXPECT_EQ(s1.str(), s2.str());
}

TEST(SampleLog, RoundTrip) {
  auto model = pipeline::build_model<float>({}, 3);
  auto data = synth::gen_mixed(bank(), {}, 30, 6);
  auto rep = ablation_report(model, data, kAllMasks, {}, false);
  auto path = temp_file("log.jsonl").string();
  write_sample_log(path, rep.log);
  auto back = read_sample_log(path);
  ASSERT_EQ(back.size(), rep.log.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].seed_key, rep.log[i].seed_key);
    EXPECT_EQ(back[i].mask, rep.log[i].mask);
    EXPECT_EQ(back[i].chosen, rep.log[i].chosen);
    EXPECT_EQ(back[i].correct, rep.log[i].correct);
  }
  AblationReport re;
  re.log = back;
  recompute_from_log(re);
  EXPECT_EQ(re.visual_contribution, rep.visual_contribution);
}
