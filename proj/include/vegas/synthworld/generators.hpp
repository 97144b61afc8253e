#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vegas/rng.hpp"
#include "vegas/synthworld/bank.hpp"

namespace vegas::synth {

enum class Kind { descriptive = 0, causal, nuanced, ordering };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);

/// (dataset seed, kind stream, index). A scenario is a pure function of the
/// bank and its key.
struct SeedKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t index = 0;
  friend bool operator==(const SeedKey&, const SeedKey&) = default;
};

struct Scenario {
  Kind kind = Kind::descriptive;
  Matrix<float> frames;  // n x d_raw
  Matrix<float> hint;  // m x d_text, the question
  Matrix<float> options;  // 4 x d_text
  int answer_idx = 0;
  std::vector<bool> relevant_mask;
  Matrix<float> subtitle;  // s x d_text, may have zero rows
  bool bias_applied = false;
  SeedKey seed_key;
  /// Concept ids visible in the sampled frames (nuanced samples only).
  std::vector<int> caption;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  /// Throws InputError when an invariant is broken.
  void validate() const;
};

struct GenConfig {
  int n = 32;
  int k = 8;
  double noise_std = 0.26;
  int window_len = 8;
  int subtitle_len = 3;
  /// Probability that one subtitle token names the answer concept.
  double p_sub = 0.0;
  double p_bias = 0.0;
  double bias_scale = 1.0;
};

/// Maps sampled frames to the sorted list of concept ids they show.
class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::vector<int> caption(const Matrix<float>& frames) const = 0;
};

/// Least-squares decomposition of each frame over the prototype bank; a
/// concept counts as present when its coefficient exceeds `threshold` in at
/// least `min_support` frames.
class OracleCaptioner : public Captioner {
 public:
  explicit OracleCaptioner(const PrototypeBank& bank, double threshold = 0.5, int min_support = 2)
      : bank_(&bank), threshold_(threshold), min_support_(min_support) {}
  std::vector<int> caption(const Matrix<float>& frames) const override;

 private:
  const PrototypeBank* bank_;
  double threshold_;
  int min_support_;
};

struct NuancedQa {
  int cue = -1;
  int answer = -1;
};

/// Writes one question per sample from the two captions so that sample i's
/// answer follows from S_i alone.
class QuestionWriter {
 public:
  virtual ~QuestionWriter() = default;
  virtual std::array<NuancedQa, 2> write(const std::vector<int>& s1, const std::vector<int>& s2) const = 0;
};

/// Uses the concepts in S_i but not S_j: the smallest and largest ids become
/// the cue (in the question) and the answer, in an order fixed by a hash of
/// both captions.
class DistinctiveQuestionWriter : public QuestionWriter {
 public:
  std::array<NuancedQa, 2> write(const std::vector<int>& s1, const std::vector<int>& s2) const override;
};

struct NuancedSample {
  std::vector<int> indices;  // sampled frame positions, ascending
  std::vector<int> caption;
  NuancedQa qa;
  Scenario scenario;
};

struct NuancedPair {
  Matrix<float> video;
  std::array<NuancedSample, 2> samples;
};

Scenario gen_descriptive_composite(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key);
Scenario gen_causal(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key);
NuancedPair gen_nuanced_pair(const PrototypeBank& bank, const GenConfig& cfg, const Captioner& captioner,
                             const QuestionWriter& writer, const SeedKey& key);
/// Two concepts in succession; the question asks which came first.
Scenario gen_ordering(const PrototypeBank& bank, const GenConfig& cfg, const SeedKey& key);

/// With probability p_bias adds bias_vec to the correct option's embedding.
void inject_language_bias(Scenario& s, const Matrix<float>& bias_vec, double p_bias, RngStream& rng);

struct EmotionSample {
  Matrix<float> feature;  // 1 x d_raw
  int label = 0;
  int concept_id = 0;
  SeedKey seed_key;
};

EmotionSample gen_emotion_sample(const PrototypeBank& bank, double noise_std, const SeedKey& key);

/// `count` scenarios of one kind (nuanced: count/2 pairs, both samples kept),
/// bias injection and subtitles per cfg. Keys are (seed, kind, index).
std::vector<Scenario> gen_dataset(const PrototypeBank& bank, const GenConfig& cfg, Kind kind, int count,
                                  std::uint64_t seed);
/// Descriptive, causal and nuanced in a 2:2:1 ratio, interleaved deterministically.
std::vector<Scenario> gen_mixed(const PrototypeBank& bank, const GenConfig& cfg, int count, std::uint64_t seed);
std::vector<EmotionSample> gen_emotion_dataset(const PrototypeBank& bank, double noise_std, int count,
                                               std::uint64_t seed);

}  // namespace vegas::synth
