#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vegas/pipeline/model.hpp"

namespace vegas::pipeline {

enum class Stage { lgs = 0, gift1, gift2, mcq };
std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);

enum class OrderPolicy { order1, order2, both };

struct StageConfig {
  Stage stage = Stage::lgs;
  /// Learning rate per parameter group; groups not listed are frozen.
  std::map<std::string, double> lr;
  int batch_size = 64;
  int epochs = 1;
  OrderPolicy ordering = OrderPolicy::order1;
  lgs::Selector selector = lgs::Selector::perturbed;
  /// Sampler in train mode (perturbed, gradient reaches the scorer) or eval mode (hard, frozen).
  topk::Mode sampler_mode = topk::Mode::train;
  bool hint_with_answer = true;
  double answer_hint_prob = 1.0;
  /// Learning rates fall linearly to zero over the stage's full schedule
  /// (every epoch, regardless of max_steps).
  bool linear_decay = false;
  bool use_tam = true;
  double sigma = 0.05;
  int num_samples = 500;
  /// Per-sample modality mask drawn from these weights.
  std::vector<std::pair<Mask, double>> masks{{Mask::QAV, 1.0}};
  /// Stage lgs: nuanced samples also feed caption batches alternating with QA batches.
  bool caption_task = true;
  /// Stop after this many optimizer steps (negative: run every epoch).
  int max_steps = -1;

  void validate() const;
};

struct TrainLogRow {
  int step = 0;
  double loss = 0;
  double lr = 0;
  double wall_ms = 0;
};

struct TrainState {
  Stage stage = Stage::lgs;
  /// Optimizer steps already taken in this stage (resume point).
  int step = 0;
};

/// One pass of the configured stage over `data`. Batches are formed from a
/// shuffle keyed by (seed, stage, epoch); per-sample gradients are reduced in
/// sample order, so the result does not depend on the worker count. Starting
/// from `state.step > 0` skips the batches already taken.
std::vector<TrainLogRow> train_stage(Model<float>& model, const std::vector<synth::Scenario>& data,
                                     const synth::PrototypeBank& bank, const StageConfig& cfg, std::uint64_t seed,
                                     TrainState& state);

std::vector<TrainLogRow> train_stage_gift1(Model<float>& model, const std::vector<synth::EmotionSample>& data,
                                           const StageConfig& cfg, std::uint64_t seed, TrainState& state);

/// Defaults for each stage. `reference` selects the reference-scale learning rates and
/// batch size instead of the desk-scale ones.
StageConfig default_stage_config(Stage stage, bool reference = false);

struct EmotionEval {
  double accuracy = 0;
  int n = 0;
};
EmotionEval eval_emotion(const Model<float>& model, const std::vector<synth::EmotionSample>& data);

}  // namespace vegas::pipeline
