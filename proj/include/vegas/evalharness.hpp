#pragma once

#include <map>
#include <string>
#include <vector>

#include "vegas/pipeline/model.hpp"

namespace vegas::eval {

using pipeline::Mask;

struct SampleRecord {
  synth::SeedKey seed_key;
  Mask mask = Mask::QAVS;
  int chosen = -1;
  bool correct = false;
};

struct MaskResult {
  Mask mask = Mask::QAVS;
  double accuracy = 0;
  int n = 0;
  double ci_low = 0;
  double ci_high = 0;
};

/// Wilson score interval for `correct` successes out of `n` (z = 1.96 gives 95%).
std::pair<double, double> wilson_interval(int correct, int n, double z = 1.96);

struct EvalOptions {
  pipeline::Ordering ordering = pipeline::Ordering::order1;
  lgs::Selector selector = lgs::Selector::perturbed;
  bool use_tam = true;
  std::uint64_t seed = 0;
};

struct McqResult {
  MaskResult summary;
  std::vector<SampleRecord> log;
};

/// Argmax-match accuracy with the sampler in eval mode and the question as the only hint.
McqResult eval_mcq(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data, Mask mask,
                   const EvalOptions& opt = {});

struct SamplerDiagnostics {
  double recall_at_k = 0;
  double mean_kendall_tau = 0;
  int n = 0;
  std::map<std::string, double> recall_by_kind;
};

/// |selected ∩ relevant| / min(k, |relevant|).
double recall_at_k(const std::vector<int>& selected, const std::vector<bool>& relevant);
/// Kendall tau between selection order and frame-time order.
double kendall_tau(const std::vector<int>& selected);

SamplerDiagnostics sampler_diagnostics(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data,
                                       const EvalOptions& opt = {});

struct AblationReport {
  std::string run_id;
  std::string stage;
  std::vector<MaskResult> rows;
  /// NaN when a mask the delta needs was not evaluated.
  double visual_contribution = 0;
  double subtitle_contribution = 0;
  double shortcut_score = 0;
  SamplerDiagnostics diagnostics;
  std::vector<SampleRecord> log;

  const MaskResult* find(Mask m) const;
};

inline const std::vector<Mask> kAllMasks{Mask::A, Mask::QA, Mask::QAV, Mask::QAVS};

AblationReport ablation_report(const pipeline::Model<float>& model, const std::vector<synth::Scenario>& data,
                               const std::vector<Mask>& masks = kAllMasks, const EvalOptions& opt = {},
                               bool with_diagnostics = true);

/// Fills the accuracy rows and deltas of `report` from its per-sample log.
void recompute_from_log(AblationReport& report);

/// CSV (header + one row per mask per report) and a plain-text summary next to it.
void emit_report(const std::vector<AblationReport>& reports, const std::string& csv_path,
                 const std::string& summary_path);
std::string report_csv(const std::vector<AblationReport>& reports);
std::string report_summary(const std::vector<AblationReport>& reports);

/// Line-delimited JSON {seed_key, mask, chosen, correct}.
void write_sample_log(const std::string& path, const std::vector<SampleRecord>& log);
std::vector<SampleRecord> read_sample_log(const std::string& path);

}  // namespace vegas::eval
