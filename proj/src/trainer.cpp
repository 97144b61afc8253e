#include "vegas/pipeline/trainer.hpp"

#include <chrono>
#include <numeric>

#include "vegas/parallel.hpp"

namespace vegas::pipeline {

namespace {

struct Task {
  std::size_t sample = 0;
  bool caption = false;
};

constexpr std::uint64_t kStageStreamBase = 100;

std::vector<std::vector<Task>> make_batches(const std::vector<synth::Scenario>& data, const StageConfig& cfg,
                                            std::uint64_t seed, int epoch) {
  RngStream rng(seed, {kStageStreamBase + static_cast<std::uint64_t>(cfg.stage), static_cast<std::uint64_t>(epoch), 0});
  std::vector<std::size_t> qa(data.size());
  std::iota(qa.begin(), qa.end(), 0);
  auto r_qa = rng.child(0);
  r_qa.shuffle(qa.begin(), qa.end());
  std::vector<std::size_t> cap;
  if (cfg.stage == Stage::lgs && cfg.caption_task) {
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].kind == synth::Kind::nuanced) cap.push_back(i);
    auto r_cap = rng.child(1);
    r_cap.shuffle(cap.begin(), cap.end());
  }
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  auto chunk = [b](const std::vector<std::size_t>& idx, bool caption) {
    std::vector<std::vector<Task>> out;
    for (std::size_t i = 0; i < idx.size(); i += b) {
      std::vector<Task> batch;
      for (std::size_t j = i; j < std::min(idx.size(), i + b); ++j) batch.push_back(Task{idx[j], caption});
      out.push_back(std::move(batch));
    }
    return out;
  };
  auto qa_batches = chunk(qa, false);
  auto cap_batches = chunk(cap, true);
  // QA and caption batches alternate while both last
  std::vector<std::vector<Task>> out;
  std::size_t i = 0, j = 0;
  while (i < qa_batches.size() || j < cap_batches.size()) {
    if (i < qa_batches.size()) out.push_back(std::move(qa_batches[i++]));
    if (j < cap_batches.size()) out.push_back(std::move(cap_batches[j++]));
  }
  return out;
}

Mask draw_mask(const StageConfig& cfg, RngStream rng) {
  if (cfg.masks.size() == 1) return cfg.masks.front().first;
  double total = 0;
  for (const auto& [m, w] : cfg.masks) total += w;
  double u = rng.uniform() * total;
  for (const auto& [m, w] : cfg.masks) {
    if (u < w) return m;
    u -= w;
  }
  return cfg.masks.back().first;
}

ForwardOptions forward_options(const StageConfig& cfg, Mask mask, Ordering ordering) {
  ForwardOptions o;
  o.mask = mask;
  o.ordering = ordering;
  o.selector = cfg.selector;
  o.sampler_mode = cfg.sampler_mode;
  o.hint_with_answer = cfg.hint_with_answer;
  o.answer_hint_prob = cfg.answer_hint_prob;
  o.use_tam = cfg.use_tam;
  o.sigma = cfg.sigma;
  o.num_samples = cfg.num_samples;
  return o;
}

Var<float> task_loss(Tape<float>& tape, const Model<float>& model, const synth::PrototypeBank& bank,
                     const synth::Scenario& s, const Task& task, const StageConfig& cfg, const RngStream& rng) {
  if (task.caption) {
    auto opt = forward_options(cfg, Mask::QAV, Ordering::order1);
    auto logits = forward_caption(tape, model, bank, s, opt, rng);
    return sigmoid_cross_entropy(logits, caption_targets<float>(s, model.dims.P));
  }
  const Mask mask = draw_mask(cfg, rng.child(1));
  const std::vector<int> target{s.answer_idx};
  auto ce = [&](Ordering o) {
    return softmax_cross_entropy(forward_answer(tape, model, s, forward_options(cfg, mask, o), rng),
                                 std::span<const int>(target));
  };
  switch (cfg.ordering) {
    case OrderPolicy::order1: return ce(Ordering::order1);
    case OrderPolicy::order2: return ce(Ordering::order2);
    case OrderPolicy::both: return scale(add(ce(Ordering::order1), ce(Ordering::order2)), 0.5f);
  }
  throw ConfigError("unknown ordering policy");
}

std::map<std::string, std::uint64_t> frozen_hashes(const Model<float>& model, const StageConfig& cfg) {
  std::map<std::string, std::uint64_t> out;
  for (const char* g : kGroups)
    if (!cfg.lr.count(g)) out[g] = group_hash(model.store, g);
  return out;
}

// a fresh stage starts a fresh optimizer; a resumed one keeps its moments
void reset_moments(Model<float>& model) {
  for (auto& e : model.store) {
    e.m.setZero();
    e.v.setZero();
  }
}

void check_frozen(const Model<float>& model, const std::map<std::string, std::uint64_t>& before) {
  for (const auto& [g, h] : before)
    if (group_hash(model.store, g) != h) throw StateError("frozen parameter group '" + g + "' was modified");
}

/// Shared loop: `loss_of(tape, index, rng)` builds one sample's loss.
template <typename TaskT, typename LossFn>
std::vector<TrainLogRow> run_batches(Model<float>& model, const std::vector<std::vector<TaskT>>& batches,
                                     const StageConfig& cfg, std::uint64_t seed, int& step, int& global_batch,
                                     int total_steps, LossFn&& loss_of, std::chrono::steady_clock::time_point start) {
  std::vector<TrainLogRow> log;
  AdamOptions adam;
  adam.skip_missing = true;
  for (const auto& batch : batches) {
    if (cfg.max_steps >= 0 && step >= cfg.max_steps) break;
    // batches before the resume point were consumed by an earlier run
    if (global_batch++ < step) continue;
    std::vector<GradSet<float>> grads(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
      RngStream rng(seed, {kStageStreamBase + static_cast<std::uint64_t>(cfg.stage), static_cast<std::uint64_t>(step), i});
      Tape<float> tape(model.store);
      auto loss = loss_of(tape, batch[i], rng);
      losses[i] = loss.value()(0, 0);
      tape.backward(loss);
      grads[i] = model.store.make_grad_set();
      tape.accumulate(grads[i]);
    });
    auto total = model.store.make_grad_set();
    double loss_sum = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      total.add(grads[i]);
      loss_sum += losses[i];
    }
    total.scale(1.0f / static_cast<float>(batch.size()));
    model.store.set_grads(total);
    auto lr = cfg.lr;
    if (cfg.linear_decay && total_steps > 0) {
      const double f = std::max(0.0, 1.0 - static_cast<double>(step) / total_steps);
      for (auto& [g, v] : lr) v *= f;
    }
    double max_lr = 0;
    for (const auto& [g, v] : lr) max_lr = std::max(max_lr, v);
    ++step;
    adam_step(model.store, adam, step, lr);
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.push_back(TrainLogRow{step, loss_sum / static_cast<double>(batch.size()), max_lr, ms});
  }
  return log;
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::lgs: return "lgs";
    case Stage::gift1: return "gift1";
    case Stage::gift2: return "gift2";
    case Stage::mcq: return "mcq";
  }
  throw ConfigError("unknown stage");
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::lgs, Stage::gift1, Stage::gift2, Stage::mcq})
    if (stage_name(st) == s) return st;
  throw ConfigError("unknown stage '" + s + "' (expected lgs, gift1, gift2 or mcq)");
}

void StageConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (lr.empty()) throw ConfigError("stage trains no parameter group");
  for (const auto& [g, v] : lr) {
    if (std::find_if(kGroups.begin(), kGroups.end(), [&](const char* k) { return g == k; }) == kGroups.end())
      throw ConfigError("unknown parameter group '" + g + "'");
    if (g == "encoder") throw ConfigError("the encoder emulation is frozen in every stage");
    if (!(v > 0)) throw ConfigError("learning rate for '" + g + "' must be > 0");
  }
  if (masks.empty()) throw ConfigError("stage needs at least one training mask");
  for (const auto& [m, w] : masks)
    if (!(w >= 0)) throw ConfigError("mask weights must be >= 0");
  if (!(answer_hint_prob >= 0 && answer_hint_prob <= 1)) throw ConfigError("answer_hint_prob must be in [0, 1]");
  if (sampler_mode == topk::Mode::train && (!(sigma > 0) || num_samples < 1))
    throw ConfigError("train-mode sampler needs sigma > 0 and num_samples >= 1");
}

std::vector<TrainLogRow> train_stage(Model<float>& model, const std::vector<synth::Scenario>& data,
                                     const synth::PrototypeBank& bank, const StageConfig& cfg, std::uint64_t seed,
                                     TrainState& state) {
  cfg.validate();
  if (cfg.stage == Stage::gift1) throw ConfigError("gift1 trains on emotion samples, not scenarios");
  if (data.empty()) throw ConfigError("stage " + stage_name(cfg.stage) + ": empty dataset");
  if (state.stage != cfg.stage) state = TrainState{cfg.stage, 0};
  if (state.step == 0) reset_moments(model);
  const auto frozen = frozen_hashes(model, cfg);
  const auto start = std::chrono::steady_clock::now();
  std::vector<TrainLogRow> log;
  int global_batch = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_batches(data, cfg, seed, epoch);
    auto rows = run_batches(
        model, batches, cfg, seed, state.step, global_batch, static_cast<int>(batches.size()) * cfg.epochs,
        [&](Tape<float>& tape, const Task& t, const RngStream& rng) {
          return task_loss(tape, model, bank, data[t.sample], t, cfg, rng);
        },
        start);
    log.insert(log.end(), rows.begin(), rows.end());
  }
  check_frozen(model, frozen);
  return log;
}

std::vector<TrainLogRow> train_stage_gift1(Model<float>& model, const std::vector<synth::EmotionSample>& data,
                                           const StageConfig& cfg, std::uint64_t seed, TrainState& state) {
  cfg.validate();
  if (cfg.stage != Stage::gift1) throw ConfigError("train_stage_gift1 needs a gift1 stage config");
  if (data.empty()) throw ConfigError("stage gift1: empty dataset");
  for (const auto& e : data)
    if (e.label < 0 || e.label >= model.dims.num_emotions) throw InputError("emotion label out of range");
  if (state.stage != cfg.stage) state = TrainState{cfg.stage, 0};
  if (state.step == 0) reset_moments(model);
  const auto frozen = frozen_hashes(model, cfg);
  const auto start = std::chrono::steady_clock::now();
  std::vector<TrainLogRow> log;
  int global_batch = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream rng(seed, {kStageStreamBase + static_cast<std::uint64_t>(cfg.stage), static_cast<std::uint64_t>(epoch), 0});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size))
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size))));
    auto rows = run_batches(
        model, batches, cfg, seed, state.step, global_batch, static_cast<int>(batches.size()) * cfg.epochs,
        [&](Tape<float>& tape, std::size_t idx, const RngStream&) {
          const std::vector<int> target{data[idx].label};
          return softmax_cross_entropy(forward_emotion(tape, model, data[idx].feature), std::span<const int>(target));
        },
        start);
    log.insert(log.end(), rows.begin(), rows.end());
  }
  check_frozen(model, frozen);
  return log;
}

EmotionEval eval_emotion(const Model<float>& model, const std::vector<synth::EmotionSample>& data) {
  EmotionEval out;
  out.n = static_cast<int>(data.size());
  if (data.empty()) return out;
  int correct = 0;
  for (const auto& e : data) {
    Tape<float> tape(model.store);
    auto logits = forward_emotion(tape, model, e.feature).value();
    Eigen::Index arg;
    logits.row(0).maxCoeff(&arg);
    if (arg == e.label) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

StageConfig default_stage_config(Stage stage, bool reference) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::lgs:
      c.lr = reference ? std::map<std::string, double>{{"scorer", 2e-4}, {"tam", 2e-4}, {"stp", 2e-4}, {"reader", 2e-4}}
                   : std::map<std::string, double>{{"scorer", 1.5e-3}, {"tam", 1.5e-3}, {"stp", 1.5e-3}, {"reader", 1.5e-3}};
      c.batch_size = reference ? 64 : 2;
      c.epochs = 1;
      c.sampler_mode = topk::Mode::train;
      c.hint_with_answer = true;
      if (!reference) {
        // scores are standardized per video, so sigma is relative to their spread
        c.sigma = 2.0;
        c.num_samples = 2000;
        c.answer_hint_prob = 0.25;
        c.linear_decay = true;
      }
      c.masks = {{Mask::QAV, 1.0}};
      break;
    case Stage::gift1:
      c.lr = {{"stp", reference ? 1e-6 : 1e-3}, {"emotion_head", reference ? 1e-6 : 1e-3}};
      c.batch_size = reference ? 64 : 16;
      c.epochs = 1;
      break;
    case Stage::gift2:
      c.lr = reference ? std::map<std::string, double>{{"stp", 2e-5}, {"reader", 2e-4}}
                   : std::map<std::string, double>{{"stp", 2e-4}, {"reader", 2e-3}};
      c.batch_size = reference ? 64 : 8;
      c.epochs = 1;
      c.ordering = OrderPolicy::both;
      c.sampler_mode = topk::Mode::eval;
      c.hint_with_answer = false;
      c.masks = {{Mask::QAVS, 0.4}, {Mask::QAV, 0.3}, {Mask::QA, 0.15}, {Mask::A, 0.15}};
      break;
    case Stage::mcq:
      c.lr = reference ? std::map<std::string, double>{{"tam", 2e-4}, {"stp", 2e-4}, {"reader", 2e-4}}
                   : std::map<std::string, double>{{"tam", 2e-3}, {"stp", 2e-3}, {"reader", 2e-3}};
      c.batch_size = reference ? 64 : 8;
      c.epochs = 3;
      c.sampler_mode = topk::Mode::eval;
      c.hint_with_answer = false;
      c.masks = {{Mask::QAVS, 0.4}, {Mask::QAV, 0.3}, {Mask::QA, 0.15}, {Mask::A, 0.15}};
      break;
  }
  return c;
}

}  // namespace vegas::pipeline
