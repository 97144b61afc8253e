#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vegas/pipeline/trainer.hpp"

namespace vegas::config {

struct DataSettings {
  double noise_std = 0.26;
  double p_bias = 0.0;
  double p_sub = 0.0;
  double bias_scale = 1.0;
  double text_noise = 0.5;
  int window_len = 8;
  int subtitle_len = 3;
  std::uint64_t bank_seed = 1;
};

struct StageSettings {
  std::map<std::string, double> lr;
  int batch_size = 8;
  int epochs = 1;
  bool linear_decay = false;
  /// lgs only
  double answer_hint_prob = 1.0;
  bool caption_task = true;
  /// gift2 / mcq: order1, order2 or both
  std::string ordering = "order1";
  std::map<std::string, double> mask_weights;
};

/// Sample counts and seeds of the repro run.
struct ReproSettings {
  int lgs_train = 5000;  // mixed 2:2:1 descriptive, causal, nuanced
  int recall_test = 1000;  // per kind, descriptive and causal
  int gift1_train = 2000;
  int gift1_test = 500;
  int gift2_train = 2000;
  int test = 1000;
  double baseline_p_bias = 0.8;
  int ordering_train = 2000;
  int ordering_test = 1000;
};

struct Paths {
  std::string data = "data";
  std::string checkpoints = "checkpoints";
  std::string reports = "reports";
};

struct RunConfig {
  std::uint64_t seed = 7;
  pipeline::ModelDims dims;
  /// Sampler noise during stage lgs (relative to standardized scores) and draws per forward.
  double sigma = 2.0;
  int num_samples = 2000;
  DataSettings data;
  std::map<std::string, StageSettings> stages;
  ReproSettings repro;
  Paths paths;

  void validate() const;
};

/// Desk-scale defaults; `reference` swaps in the reference-scale learning rates, batch size and sampler noise.
RunConfig default_config(bool reference = false);

/// JSON with // and /* */ comments. Missing keys keep their defaults; unknown
/// keys and wrongly typed values throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Every field, keys sorted, no whitespace.
std::string canonical_json(const RunConfig& cfg, bool with_paths = true);
/// FNV-1a 64 of the canonical form without the paths block.
std::uint64_t config_hash(const RunConfig& cfg);

pipeline::StageConfig stage_config(const RunConfig& cfg, pipeline::Stage stage);
synth::GenConfig gen_config(const RunConfig& cfg);
synth::BankConfig bank_config(const RunConfig& cfg);

}  // namespace vegas::config
