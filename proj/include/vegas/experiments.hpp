#pragma once

#include <string>
#include <vector>

#include "vegas/config.hpp"
#include "vegas/evalharness.hpp"
#include "vegas/synthworld/dataset_io.hpp"

namespace vegas::experiments {

struct Datasets {
  std::vector<synth::Scenario> lgs_train;  // mixed, 2:2:1
  std::vector<synth::Scenario> recall_descriptive;
  std::vector<synth::Scenario> recall_causal;
  std::vector<synth::EmotionSample> gift1_train;
  std::vector<synth::EmotionSample> gift1_test;
  std::vector<synth::Scenario> gift2_train;
  std::vector<synth::Scenario> test;
  std::vector<synth::Scenario> biased_train;
  std::vector<synth::Scenario> biased_test;
  std::vector<synth::Scenario> ordering_train;
  std::vector<synth::Scenario> ordering_test;
};

/// Seed of a named sub-run, derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

synth::PrototypeBank make_bank(const config::RunConfig& cfg);
Datasets make_datasets(const config::RunConfig& cfg, const synth::PrototypeBank& bank);
/// One .jsonl per split plus manifest.json with counts and the bank seed.
void write_datasets(const std::string& dir, const Datasets& d, const config::RunConfig& cfg);
Datasets read_datasets(const std::string& dir);

struct RecallResult {
  double descriptive = 0;
  double causal = 0;
  double uniform_descriptive = 0;
  double uniform_causal = 0;
};
RecallResult lgs_recall(const pipeline::Model<float>& model, const Datasets& d, std::uint64_t seed);

struct TamResult {
  double with_tam = 0;
  double without_tam = 0;
  int n = 0;
};
/// Before/after task with uniform frames, TAM on vs ablated, same budget and seeds.
TamResult tam_experiment(const config::RunConfig& cfg, const synth::PrototypeBank& bank, const Datasets& d);

struct AcceptanceRow {
  int criterion = 0;
  std::string name;
  double value = 0;
  std::string op;  // ">=", "<=", "<", "in"
  double lo = 0;
  double hi = 0;
  bool pass = false;
};
std::string acceptance_csv(const std::vector<AcceptanceRow>& rows);

struct ReproResult {
  std::vector<eval::AblationReport> reports;
  RecallResult recall;
  TamResult tam;
  double emotion_accuracy = 0;
  std::vector<AcceptanceRow> acceptance;
  /// name, seconds
  std::vector<std::pair<std::string, double>> timings;
};

/// gen -> write/read datasets -> lgs -> gift1 -> gift2 (dual) -> eval, plus
/// the single-ordering control, the uniform-sampling baseline on biased
/// data and the ordering benchmark. Writes datasets, checkpoints, training
/// logs, report.csv, acceptance.csv (all deterministic) and timings.csv
/// under the configured paths.
ReproResult run_repro(const config::RunConfig& cfg, bool with_gradchecks = true);

}  // namespace vegas::experiments
