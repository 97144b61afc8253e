#include "vegas/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vegas::config {

using nlohmann::json;

namespace {

// Reads known keys from one object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const json& v = *it;
    bool ok;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      ok = v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer();
    } else {
      ok = v.is_number();
    }
    if (!ok) throw ConfigError(path(key) + ": wrong type (" + v.type_name() + ")");
    out = v.get<T>();
  }

  void get_map(const std::string& key, std::map<std::string, double>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_object()) throw ConfigError(path(key) + ": expected an object");
    out.clear();
    for (auto& [k, v] : it->items()) {
      if (!v.is_number()) throw ConfigError(path(key) + "." + k + ": expected a number");
      out[k] = v.get<double>();
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key: " + path(k));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const std::array<pipeline::Stage, 4> kStages{pipeline::Stage::lgs, pipeline::Stage::gift1, pipeline::Stage::gift2,
                                             pipeline::Stage::mcq};

std::string ordering_name(pipeline::OrderPolicy p) {
  switch (p) {
    case pipeline::OrderPolicy::order1: return "order1";
    case pipeline::OrderPolicy::order2: return "order2";
    case pipeline::OrderPolicy::both: return "both";
  }
  return "order1";
}

pipeline::OrderPolicy parse_ordering(const std::string& s) {
  if (s == "order1") return pipeline::OrderPolicy::order1;
  if (s == "order2") return pipeline::OrderPolicy::order2;
  if (s == "both") return pipeline::OrderPolicy::both;
  throw ConfigError("ordering must be order1, order2 or both, got '" + s + "'");
}

StageSettings settings_from(const pipeline::StageConfig& c) {
  StageSettings s;
  s.lr = c.lr;
  s.batch_size = c.batch_size;
  s.epochs = c.epochs;
  s.linear_decay = c.linear_decay;
  s.answer_hint_prob = c.answer_hint_prob;
  s.caption_task = c.caption_task;
  s.ordering = ordering_name(c.ordering);
  for (auto& [m, w] : c.masks) s.mask_weights[pipeline::mask_name(m)] = w;
  return s;
}

json to_json(const RunConfig& c, bool with_paths) {
  json j;
  j["seed"] = c.seed;
  const auto& d = c.dims;
  j["dims"] = {{"n", d.n},           {"k", d.k},
               {"d_raw", d.d_raw},   {"d_text", d.d_text},
               {"d", d.d},           {"d_model", d.d_model},
               {"heads", d.heads},   {"P", d.P},
               {"num_emotions", d.num_emotions}, {"slot_scale", d.slot_scale},
               {"aligned_init", d.aligned_init}, {"align_gain", d.align_gain}};
  j["ptopk"] = {{"sigma", c.sigma}, {"num_samples", c.num_samples}};
  const auto& a = c.data;
  j["data"] = {{"noise_std", a.noise_std},   {"p_bias", a.p_bias},         {"p_sub", a.p_sub},
               {"bias_scale", a.bias_scale}, {"text_noise", a.text_noise}, {"window_len", a.window_len},
               {"subtitle_len", a.subtitle_len}, {"bank_seed", a.bank_seed}};
  json stages = json::object();
  for (auto& [name, s] : c.stages) {
    stages[name] = {{"lr", s.lr},
                    {"batch_size", s.batch_size},
                    {"epochs", s.epochs},
                    {"linear_decay", s.linear_decay},
                    {"answer_hint_prob", s.answer_hint_prob},
                    {"caption_task", s.caption_task},
                    {"ordering", s.ordering},
                    {"mask_weights", s.mask_weights}};
  }
  j["stages"] = stages;
  const auto& r = c.repro;
  j["repro"] = {{"lgs_train", r.lgs_train},           {"recall_test", r.recall_test},
                {"gift1_train", r.gift1_train},       {"gift1_test", r.gift1_test},
                {"gift2_train", r.gift2_train},       {"test", r.test},
                {"baseline_p_bias", r.baseline_p_bias}, {"ordering_train", r.ordering_train},
                {"ordering_test", r.ordering_test}};
  if (with_paths)
    j["paths"] = {{"data", c.paths.data}, {"checkpoints", c.paths.checkpoints}, {"reports", c.paths.reports}};
  return j;
}

void read_stage(const json& j, const std::string& name, StageSettings& s) {
  Fields f(j, "stages." + name);
  f.get_map("lr", s.lr);
  f.get("batch_size", s.batch_size);
  f.get("epochs", s.epochs);
  f.get("linear_decay", s.linear_decay);
  f.get("answer_hint_prob", s.answer_hint_prob);
  f.get("caption_task", s.caption_task);
  f.get("ordering", s.ordering);
  f.get_map("mask_weights", s.mask_weights);
  f.finish();
}

}  // namespace

void RunConfig::validate() const {
  dims.validate();
  if (!(sigma > 0)) throw ConfigError("ptopk.sigma must be > 0");
  if (num_samples < 1) throw ConfigError("ptopk.num_samples must be >= 1");
  if (!(data.noise_std >= 0)) throw ConfigError("data.noise_std must be >= 0");
  for (auto [v, name] : {std::pair{data.p_bias, "data.p_bias"}, std::pair{data.p_sub, "data.p_sub"},
                         std::pair{repro.baseline_p_bias, "repro.baseline_p_bias"}})
    if (!(v >= 0 && v <= 1)) throw ConfigError(std::string(name) + " must be in [0, 1]");
  if (!(data.text_noise >= 0)) throw ConfigError("data.text_noise must be >= 0");
  if (data.window_len < 1 || data.window_len >= dims.n) throw ConfigError("data.window_len must be in [1, n)");
  if (data.subtitle_len < 1) throw ConfigError("data.subtitle_len must be >= 1");
  for (auto& [name, s] : stages) {
    const auto stage = pipeline::parse_stage(name);
    for (auto& [g, lr] : s.lr) {
      if (std::find_if(pipeline::kGroups.begin(), pipeline::kGroups.end(), [&](const char* k) { return g == k; }) ==
          pipeline::kGroups.end())
        throw ConfigError("stages." + name + ".lr: unknown parameter group '" + g + "'");
      if (!(lr >= 0)) throw ConfigError("stages." + name + ".lr." + g + " must be >= 0");
    }
    parse_ordering(s.ordering);
    for (auto& [m, w] : s.mask_weights) {
      pipeline::parse_mask(m);
      if (!(w >= 0)) throw ConfigError("stages." + name + ".mask_weights." + m + " must be >= 0");
    }
    stage_config(*this, stage).validate();
  }
  for (auto stage : kStages)
    if (!stages.count(pipeline::stage_name(stage)))
      throw ConfigError("stages." + pipeline::stage_name(stage) + " missing");
  const auto& r = repro;
  for (auto [v, name] : {std::pair{r.lgs_train, "lgs_train"}, std::pair{r.recall_test, "recall_test"},
                         std::pair{r.gift1_train, "gift1_train"}, std::pair{r.gift1_test, "gift1_test"},
                         std::pair{r.gift2_train, "gift2_train"}, std::pair{r.test, "test"},
                         std::pair{r.ordering_train, "ordering_train"}, std::pair{r.ordering_test, "ordering_test"}})
    if (v < 1) throw ConfigError(std::string("repro.") + name + " must be >= 1");
  if (paths.data.empty() || paths.checkpoints.empty() || paths.reports.empty())
    throw ConfigError("paths must be non-empty");
}

RunConfig default_config(bool reference) {
  RunConfig c;
  for (auto stage : kStages)
    c.stages[pipeline::stage_name(stage)] = settings_from(pipeline::default_stage_config(stage, reference));
  if (reference) {
    c.sigma = 0.05;
    c.num_samples = 500;
  }
  return c;
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_config();
  Fields top(j, "");
  top.get("seed", c.seed);
  if (auto* d = top.sub("dims")) {
    Fields f(*d, "dims");
    auto& m = c.dims;
    f.get("n", m.n);
    f.get("k", m.k);
    f.get("d_raw", m.d_raw);
    f.get("d_text", m.d_text);
    f.get("d", m.d);
    f.get("d_model", m.d_model);
    f.get("heads", m.heads);
    f.get("P", m.P);
    f.get("num_emotions", m.num_emotions);
    f.get("slot_scale", m.slot_scale);
    f.get("aligned_init", m.aligned_init);
    f.get("align_gain", m.align_gain);
    f.finish();
  }
  if (auto* p = top.sub("ptopk")) {
    Fields f(*p, "ptopk");
    f.get("sigma", c.sigma);
    f.get("num_samples", c.num_samples);
    f.finish();
  }
  if (auto* p = top.sub("data")) {
    Fields f(*p, "data");
    auto& a = c.data;
    f.get("noise_std", a.noise_std);
    f.get("p_bias", a.p_bias);
    f.get("p_sub", a.p_sub);
    f.get("bias_scale", a.bias_scale);
    f.get("text_noise", a.text_noise);
    f.get("window_len", a.window_len);
    f.get("subtitle_len", a.subtitle_len);
    f.get("bank_seed", a.bank_seed);
    f.finish();
  }
  if (auto* p = top.sub("stages")) {
    Fields f(*p, "stages");
    for (auto stage : kStages) {
      const auto name = pipeline::stage_name(stage);
      if (auto* s = f.sub(name)) read_stage(*s, name, c.stages[name]);
    }
    f.finish();
  }
  if (auto* p = top.sub("repro")) {
    Fields f(*p, "repro");
    auto& r = c.repro;
    f.get("lgs_train", r.lgs_train);
    f.get("recall_test", r.recall_test);
    f.get("gift1_train", r.gift1_train);
    f.get("gift1_test", r.gift1_test);
    f.get("gift2_train", r.gift2_train);
    f.get("test", r.test);
    f.get("baseline_p_bias", r.baseline_p_bias);
    f.get("ordering_train", r.ordering_train);
    f.get("ordering_test", r.ordering_test);
    f.finish();
  }
  if (auto* p = top.sub("paths")) {
    Fields f(*p, "paths");
    f.get("data", c.paths.data);
    f.get("checkpoints", c.paths.checkpoints);
    f.get("reports", c.paths.reports);
    f.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_json(const RunConfig& cfg, bool with_paths) { return to_json(cfg, with_paths).dump(); }

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical_json(cfg, false)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

pipeline::StageConfig stage_config(const RunConfig& cfg, pipeline::Stage stage) {
  auto c = pipeline::default_stage_config(stage);
  auto it = cfg.stages.find(pipeline::stage_name(stage));
  if (it == cfg.stages.end()) return c;
  const auto& s = it->second;
  c.lr = s.lr;
  c.batch_size = s.batch_size;
  c.epochs = s.epochs;
  c.linear_decay = s.linear_decay;
  c.answer_hint_prob = s.answer_hint_prob;
  c.caption_task = s.caption_task;
  c.ordering = parse_ordering(s.ordering);
  if (!s.mask_weights.empty()) {
    c.masks.clear();
    for (auto& [m, w] : s.mask_weights) pipeline::parse_mask(m);
    // fixed order, richest mask first, so the per-sample draw does not depend on key order
    for (auto m : {pipeline::Mask::QAVS, pipeline::Mask::QAV, pipeline::Mask::QA, pipeline::Mask::A}) {
      auto w = s.mask_weights.find(pipeline::mask_name(m));
      if (w != s.mask_weights.end()) c.masks.emplace_back(m, w->second);
    }
  }
  if (stage == pipeline::Stage::lgs) {
    c.sigma = cfg.sigma;
    c.num_samples = cfg.num_samples;
  }
  return c;
}

synth::GenConfig gen_config(const RunConfig& cfg) {
  synth::GenConfig g;
  g.n = cfg.dims.n;
  g.k = cfg.dims.k;
  g.noise_std = cfg.data.noise_std;
  g.window_len = cfg.data.window_len;
  g.subtitle_len = cfg.data.subtitle_len;
  g.p_sub = cfg.data.p_sub;
  g.p_bias = cfg.data.p_bias;
  g.bias_scale = cfg.data.bias_scale;
  return g;
}

synth::BankConfig bank_config(const RunConfig& cfg) {
  synth::BankConfig b;
  b.P = cfg.dims.P;
  b.d_raw = cfg.dims.d_raw;
  b.d_text = cfg.dims.d_text;
  b.num_emotions = cfg.dims.num_emotions;
  b.text_noise = cfg.data.text_noise;
  return b;
}

}  // namespace vegas::config
