#include "vegas/synthworld/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace vegas::synth {

namespace {

constexpr std::uint64_t kStreamBase = 10;

RngStream scenario_stream(const SeedKey& key) { return RngStream(key.seed, {kStreamBase + key.stream, 0, key.index}); }

/// First `count` entries of a random permutation of the concept ids.
std::vector<int> draw_concepts(RngStream& rng, int P, int count) {
  if (count > P) throw GenerationError("not enough concepts in the bank: need " + std::to_string(count));
  std::vector<int> ids(static_cast<std::size_t>(P));
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(static_cast<std::size_t>(count));
  return ids;
}

void add_noise(Matrix<float>& frames, double noise_std, RngStream& rng) {
  if (noise_std == 0.0) return;
  for (Eigen::Index i = 0; i < frames.size(); ++i) frames.data()[i] += static_cast<float>(noise_std * rng.normal());
}

/// Options are the words of `concepts` (answer first) in shuffled order.
void set_options(Scenario& s, const PrototypeBank& bank, const std::vector<int>& concepts, RngStream& rng) {
  std::vector<int> order{0, 1, 2, 3};
  rng.shuffle(order.begin(), order.end());
  s.options.resize(4, bank.cfg.d_text);
  for (int slot = 0; slot < 4; ++slot) {
    int src = order[static_cast<std::size_t>(slot)];
    s.options.row(slot) = bank.words.row(concepts[static_cast<std::size_t>(src)]);
    if (src == 0) s.answer_idx = slot;
  }
}

Matrix<float> make_hint(const PrototypeBank& bank, QType q, std::initializer_list<int> concepts) {
  Matrix<float> h(static_cast<Eigen::Index>(1 + concepts.size()), bank.cfg.d_text);
  h.row(0) = bank.specials.row(static_cast<int>(q));
  Eigen::Index r = 1;
  for (int c : concepts) h.row(r++) = bank.words.row(c);
  return h;
}

/// Subtitle tokens from concepts outside the option set; with probability
/// p_sub one of them is replaced by the answer's dialog token.
void set_subtitle(Scenario& s, const PrototypeBank& bank, const GenConfig& cfg, int answer_concept,
                  const std::vector<int>& option_concepts, RngStream rng) {
  if (cfg.subtitle_len <= 0) {
    s.subtitle.resize(0, bank.cfg.d_text);
    return;
  }
  std::vector<int> fillers;
  for (int c = 0; c < bank.cfg.P; ++c)
    if (std::find(option_concepts.begin(), option_concepts.end(), c) == option_concepts.end()) fillers.push_back(c);
  s.subtitle.resize(cfg.subtitle_len, bank.cfg.d_text);
  for (int t = 0; t < cfg.subtitle_len; ++t)
    s.subtitle.row(t) = bank.dialog.row(fillers[rng.below(fillers.size())]);
  if (rng.uniform() < cfg.p_sub) s.subtitle.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(cfg.subtitle_len)))) = bank.dialog.row(answer_concept);
}

void finish(Scenario& s, const PrototypeBank& bank, const GenConfig& cfg, const std::vector<int>& option_concepts,
            const RngStream& rng) {
  set_subtitle(s, bank, cfg, option_concepts.front(), option_concepts, rng.child(1));
  auto bias_rng = rng.child(2);
  inject_language_bias(s, static_cast<float>(cfg.bias_scale) * bank.bias_direction, cfg.p_bias, bias_rng);
}

void check_gen_config(const GenConfig& cfg) {
  if (cfg.n < 3) throw ConfigError("scenario needs n >= 3 frames");
  if (cfg.k < 1 || cfg.k > cfg.n) throw ConfigError("scenario needs 1 <= k <= n");
  if (cfg.noise_std < 0) throw ConfigError("noise_std must be >= 0");
  if (cfg.p_bias < 0 || cfg.p_bias > 1) throw ConfigError("p_bias must be in [0, 1]");
  if (cfg.p_sub < 0 || cfg.p_sub > 1) throw ConfigError("p_sub must be in [0, 1]");
}

}  // namespace

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::descriptive: return "descriptive";
    case Kind::causal: return "causal";
    case Kind::nuanced: return "nuanced";
    case Kind::ordering: return "ordering";
  }
  throw ConfigError("unknown scenario kind");
}

Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::descriptive, Kind::causal, Kind::nuanced, Kind::ordering})
    if (kind_name(k) == s) return k;
  throw ConfigError("unknown scenario kind: " + s);
}

void Scenario::validate() const {
  const auto n = frames.rows();
  if (n == 0) throw InputError("scenario has no frames");
  if (!frames.allFinite()) throw InputError("scenario frames are not finite");
  if (hint.rows() < 1) throw InputError("scenario hint is empty");
  if (options.rows() != 4) throw InputError("scenario must have 4 options");
  if (options.cols() != hint.cols()) throw InputError("option width differs from hint width");
  if (subtitle.rows() > 0 && subtitle.cols() != hint.cols()) throw InputError("subtitle width differs from hint width");
  if (answer_idx < 0 || answer_idx >= 4) throw InputError("answer_idx out of range");
  if (static_cast<Eigen::Index>(relevant_mask.size()) != n) throw InputError("relevant_mask length differs from frame count");
  if (std::none_of(relevant_mask.begin(), relevant_mask.end(), [](bool b) { return b; }))
    throw InputError("relevant_mask has no true entry");
}

Scenario gen_descriptive_composite(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key) {
  check_gen_config(cfg);
  auto rng = scenario_stream(key);
  // subjects s1..s3, actions a1..a3, extra distractor a4
  auto c = draw_concepts(rng, bank.cfg.P, 7);
  const int n = cfg.n;
  const int len1 = (n + 2) / 3;
  const int rest = n - len1;
  const int len2 = (rest + 1) / 2;
  const std::array<int, 3> lens{len1, len2, rest - len2};
  std::array<int, 3> order{0, 1, 2};
  rng.shuffle(order.begin(), order.end());

  Scenario s;
  s.kind = Kind::descriptive;
  s.seed_key = key;
  s.frames.resize(n, bank.cfg.d_raw);
  s.relevant_mask.assign(static_cast<std::size_t>(n), false);
  int pos = 0;
  for (int clip : order) {
    Matrix<float> content = bank.protos.row(c[static_cast<std::size_t>(clip)]) + bank.protos.row(c[static_cast<std::size_t>(3 + clip)]);
    for (int i = 0; i < lens[static_cast<std::size_t>(clip)]; ++i, ++pos) {
      s.frames.row(pos) = content;
      if (clip == 0) s.relevant_mask[static_cast<std::size_t>(pos)] = true;
    }
  }
  add_noise(s.frames, cfg.noise_std, rng);
  s.hint = make_hint(bank, QType::what, {c[0]});
  std::vector<int> opts{c[3], c[4], c[5], c[6]};
  set_options(s, bank, opts, rng);
  finish(s, bank, cfg, opts, rng);
  return s;
}

Scenario gen_causal(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key) {
  check_gen_config(cfg);
  if (cfg.window_len < 1 || cfg.window_len >= cfg.n)
    throw ConfigError("causal window_len must satisfy 1 <= window_len < n");
  auto rng = scenario_stream(key);
  // cause, effect, two distractor cause/effect pairs, one extra effect
  auto c = draw_concepts(rng, bank.cfg.P, 7);
  const int n = cfg.n, w = cfg.window_len;
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - w + 1)));

  Scenario s;
  s.kind = Kind::causal;
  s.seed_key = key;
  s.frames.resize(n, bank.cfg.d_raw);
  s.relevant_mask.assign(static_cast<std::size_t>(n), false);
  const int outside = n - w;
  int seen_outside = 0;
  for (int i = 0; i < n; ++i) {
    if (i >= start && i < start + w) {
      s.frames.row(i) = bank.protos.row(c[0]) + bank.protos.row(c[1]);
      s.relevant_mask[static_cast<std::size_t>(i)] = true;
    } else {
      bool first_half = seen_outside++ < (outside + 1) / 2;
      s.frames.row(i) = first_half ? Matrix<float>(bank.protos.row(c[2]) + bank.protos.row(c[3]))
                                   : Matrix<float>(bank.protos.row(c[4]) + bank.protos.row(c[5]));
    }
  }
  add_noise(s.frames, cfg.noise_std, rng);
  s.hint = make_hint(bank, QType::why, {c[0]});
  std::vector<int> opts{c[1], c[3], c[5], c[6]};
  set_options(s, bank, opts, rng);
  finish(s, bank, cfg, opts, rng);
  return s;
}

std::vector<int> OracleCaptioner::caption(const Matrix<float>& frames) const {
  const auto& bank = *bank_;
  if (frames.cols() != bank.cfg.d_raw) throw DimensionError("captioner: frame width differs from bank");
  Matrix<float> coef = frames * bank.decoder.transpose();  // rows x P
  std::vector<int> support(static_cast<std::size_t>(bank.cfg.P), 0);
  for (Eigen::Index r = 0; r < coef.rows(); ++r)
    for (int c = 0; c < bank.cfg.P; ++c)
      if (coef(r, c) > threshold_) ++support[static_cast<std::size_t>(c)];
  std::vector<int> out;
  for (int c = 0; c < bank.cfg.P; ++c)
    if (support[static_cast<std::size_t>(c)] >= min_support_) out.push_back(c);
  return out;
}

std::array<NuancedQa, 2> DistinctiveQuestionWriter::write(const std::vector<int>& s1, const std::vector<int>& s2) const {
  std::array<NuancedQa, 2> out;
  const std::array<const std::vector<int>*, 2> caps{&s1, &s2};
  for (int i = 0; i < 2; ++i) {
    const auto& mine = *caps[static_cast<std::size_t>(i)];
    const auto& other = *caps[static_cast<std::size_t>(1 - i)];
    std::vector<int> distinct;
    std::set_difference(mine.begin(), mine.end(), other.begin(), other.end(), std::back_inserter(distinct));
    if (distinct.size() < 2)
      throw GenerationError("question writer: sample " + std::to_string(i + 1) + " has fewer than 2 distinctive concepts");
    // which of the two is the cue is decided by a hash of both captions, so
    // concept ids carry no hint of which option answers
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* v : {&mine, &other})
      for (int c : *v) h = (h ^ static_cast<std::uint64_t>(c + 1)) * 1099511628211ULL;
    const bool swap = ((h >> 17) & 1) != 0;
    out[static_cast<std::size_t>(i)] = swap ? NuancedQa{distinct.back(), distinct.front()}
                                            : NuancedQa{distinct.front(), distinct.back()};
  }
  return out;
}

NuancedPair gen_nuanced_pair(const PrototypeBank& bank, const GenConfig& cfg, const Captioner& captioner,
                             const QuestionWriter& writer, const SeedKey& key) {
  check_gen_config(cfg);
  const int n = cfg.n, k = cfg.k;
  if (2 * k - k / 2 > n) throw ConfigError("nuanced pair needs n >= 2k - k/2");
  auto rng = scenario_stream(key);
  // background, two planted per sample, two spare distractors
  auto c = draw_concepts(rng, bank.cfg.P, 7);

  std::array<std::vector<int>, 2> subsets;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    subsets[0] = rng.choose(n, k);
    subsets[1] = rng.choose(n, k);
    std::vector<int> common;
    std::set_intersection(subsets[0].begin(), subsets[0].end(), subsets[1].begin(), subsets[1].end(),
                          std::back_inserter(common));
    ok = static_cast<int>(common.size()) <= k / 2;
  }
  if (!ok) throw GenerationError("nuanced pair: sampling subsets overlap too much after 100 retries");

  NuancedPair pair;
  pair.video.resize(n, bank.cfg.d_raw);
  for (int i = 0; i < n; ++i) pair.video.row(i) = bank.protos.row(c[0]);
  for (int i = 0; i < 2; ++i) {
    const auto& mine = subsets[static_cast<std::size_t>(i)];
    const auto& other = subsets[static_cast<std::size_t>(1 - i)];
    for (int f : mine) {
      if (std::binary_search(other.begin(), other.end(), f)) continue;
      pair.video.row(f) += bank.protos.row(c[static_cast<std::size_t>(1 + 2 * i)]) +
                           bank.protos.row(c[static_cast<std::size_t>(2 + 2 * i)]);
    }
  }
  add_noise(pair.video, cfg.noise_std, rng);

  std::array<std::vector<int>, 2> captions;
  for (int i = 0; i < 2; ++i) {
    const auto& idx = subsets[static_cast<std::size_t>(i)];
    Matrix<float> picked(static_cast<Eigen::Index>(idx.size()), pair.video.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) picked.row(static_cast<Eigen::Index>(r)) = pair.video.row(idx[r]);
    captions[static_cast<std::size_t>(i)] = captioner.caption(picked);
  }
  auto qas = writer.write(captions[0], captions[1]);

  for (int i = 0; i < 2; ++i) {
    auto& smp = pair.samples[static_cast<std::size_t>(i)];
    smp.indices = subsets[static_cast<std::size_t>(i)];
    smp.caption = captions[static_cast<std::size_t>(i)];
    smp.qa = qas[static_cast<std::size_t>(i)];
    auto& s = smp.scenario;
    s.kind = Kind::nuanced;
    s.seed_key = SeedKey{key.seed, key.stream, 2 * key.index + static_cast<std::uint64_t>(i)};
    s.frames = pair.video;
    s.relevant_mask.assign(static_cast<std::size_t>(n), false);
    for (int f : smp.indices) s.relevant_mask[static_cast<std::size_t>(f)] = true;
    s.caption = smp.caption;
    s.hint = make_hint(bank, QType::nuanced, {smp.qa.cue});
    const int other_answer = qas[static_cast<std::size_t>(1 - i)].answer;
    // spare distractors drawn from concepts absent from both captions
    std::vector<int> spare;
    for (int cc = 0; cc < bank.cfg.P; ++cc) {
      bool used = std::binary_search(captions[0].begin(), captions[0].end(), cc) ||
                  std::binary_search(captions[1].begin(), captions[1].end(), cc) || cc == smp.qa.answer ||
                  cc == other_answer;
      if (!used) spare.push_back(cc);
    }
    auto srng = rng.child(10 + static_cast<std::uint64_t>(i));
    if (spare.size() < 2) throw GenerationError("nuanced pair: no spare distractor concepts");
    srng.shuffle(spare.begin(), spare.end());
    std::vector<int> opts{smp.qa.answer, other_answer, spare[0], spare[1]};
    set_options(s, bank, opts, srng);
    finish(s, bank, cfg, opts, srng);
  }
  return pair;
}

Scenario gen_ordering(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key) {
  check_gen_config(cfg);
  auto rng = scenario_stream(key);
  auto c = draw_concepts(rng, bank.cfg.P, 4);
  const int n = cfg.n;
  const int lo = n / 4, hi = (3 * n) / 4;
  const int split = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));

  Scenario s;
  s.kind = Kind::ordering;
  s.seed_key = key;
  s.frames.resize(n, bank.cfg.d_raw);
  s.relevant_mask.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    s.frames.row(i) = bank.protos.row(i < split ? c[0] : c[1]);
    s.relevant_mask[static_cast<std::size_t>(i)] = i < split;
  }
  add_noise(s.frames, cfg.noise_std, rng);
  s.hint = bank.special(QType::order);
  std::vector<int> opts{c[0], c[1], c[2], c[3]};
  set_options(s, bank, opts, rng);
  finish(s, bank, cfg, opts, rng);
  return s;
}

void inject_language_bias(Scenario& s, const Matrix<float>& bias_vec, double p_bias, RngStream& rng) {
  if (p_bias < 0 || p_bias > 1) throw ConfigError("p_bias must be in [0, 1]");
  if (bias_vec.rows() != 1 || bias_vec.cols() != s.options.cols())
    throw DimensionError("bias vector " + shape_str(bias_vec) + " vs option width " + std::to_string(s.options.cols()));
  if (p_bias == 0.0) return;
  if (rng.uniform() < p_bias) {
    s.options.row(s.answer_idx) += bias_vec;
    s.bias_applied = true;
  }
}

EmotionSample gen_emotion_sample(const PrototypeBank& bank, double noise_std, const SeedKey& key) {
  auto rng = scenario_stream(key);
  EmotionSample e;
  e.seed_key = key;
  e.concept_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(bank.cfg.P)));
  e.label = bank.emotion_labels[static_cast<std::size_t>(e.concept_id)];
  e.feature = bank.protos.row(e.concept_id);
  add_noise(e.feature, noise_std, rng);
  return e;
}

std::vector<Scenario> gen_dataset(const PrototypeBank& bank, const GenConfig& cfg, Kind kind, int count,
                                  std::uint64_t seed) {
  if (count < 0) throw ConfigError("count must be >= 0");
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(count));
  const auto stream = static_cast<std::uint64_t>(kind);
  if (kind == Kind::nuanced) {
    OracleCaptioner captioner(bank);
    DistinctiveQuestionWriter writer;
    int failures = 0;
    for (std::uint64_t p = 0; static_cast<int>(out.size()) < count; ++p) {
      NuancedPair pair;
      try {
        pair = gen_nuanced_pair(bank, cfg, captioner, writer, SeedKey{seed, stream, p});
      } catch (const GenerationError&) {
        // noisy captions occasionally leave no distinctive concepts; skip the key
        if (++failures > count + 100) throw;
        continue;
      }
      for (auto& smp : pair.samples)
        if (static_cast<int>(out.size()) < count) out.push_back(std::move(smp.scenario));
    }
    return out;
  }
  for (int i = 0; i < count; ++i) {
    SeedKey key{seed, stream, static_cast<std::uint64_t>(i)};
    switch (kind) {
      case Kind::descriptive: out.push_back(gen_descriptive_composite(bank, cfg, key)); break;
      case Kind::causal: out.push_back(gen_causal(bank, cfg, key)); break;
      case Kind::ordering: out.push_back(gen_ordering(bank, cfg, key)); break;
      case Kind::nuanced: break;
    }
  }
  return out;
}

std::vector<Scenario> gen_mixed(const PrototypeBank& bank, const GenConfig& cfg, int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("count must be >= 0");
  const int n_desc = (2 * count + 4) / 5;
  const int n_causal = (2 * count + 2) / 5;
  const int n_nuanced = count - n_desc - n_causal;
  auto desc = gen_dataset(bank, cfg, Kind::descriptive, n_desc, seed);
  auto causal = gen_dataset(bank, cfg, Kind::causal, n_causal, seed);
  auto nuanced = gen_dataset(bank, cfg, Kind::nuanced, n_nuanced, seed);
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(count));
  std::size_t a = 0, b = 0, c = 0;
  // repeating pattern D C D C N keeps the 2:2:1 ratio along the file
  while (out.size() < static_cast<std::size_t>(count)) {
    for (int slot = 0; slot < 5; ++slot) {
      if (slot == 4) {
        if (c < nuanced.size()) out.push_back(std::move(nuanced[c++]));
      } else if (slot % 2 == 0) {
        if (a < desc.size()) out.push_back(std::move(desc[a++]));
      } else if (b < causal.size()) {
        out.push_back(std::move(causal[b++]));
      }
    }
  }
  return out;
}

std::vector<EmotionSample> gen_emotion_dataset(const PrototypeBank& bank, double noise_std, int count,
                                               std::uint64_t seed) {
  if (count < 0) throw ConfigError("count must be >= 0");
  std::vector<EmotionSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_emotion_sample(bank, noise_std, SeedKey{seed, 7, static_cast<std::uint64_t>(i)}));
  return out;
}

}  // namespace vegas::synth
