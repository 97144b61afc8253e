#pragma once

#include <cstdint>
#include <vector>

#include "vegas/diffcore/tensor.hpp"

namespace vegas::synth {

struct BankConfig {
  int P = 16;
  int d_raw = 32;
  int d_text = 32;
  int num_emotions = 4;
  /// Text-side words are noisy copies of the visual prototypes (a shared,
  /// CLIP-like space); this is the per-copy noise norm before renormalizing.
  double text_noise = 0.5;
};

/// Question-type tokens that open every hint.
enum class QType : int { what = 0, why, nuanced, order, describe, count };

/// Visual prototypes plus the text-side vocabulary. Concept c has a visual
/// prototype protos.row(c), an answer/hint word words.row(c) and a subtitle
/// word dialog.row(c). Words and dialog tokens are independent noisy copies
/// of the prototype mapped into d_text (identity when d_text == d_raw), so the
/// modalities are aligned only approximately.
struct PrototypeBank {
  BankConfig cfg;
  std::uint64_t seed = 0;
  Matrix<float> protos;  // P x d_raw, unit rows
  Matrix<float> words;  // P x d_text
  Matrix<float> dialog;  // P x d_text
  Matrix<float> specials;  // QType::count x d_text
  Matrix<float> bias_direction;  // 1 x d_text
  std::vector<int> emotion_labels;  // per concept
  /// Least-squares decoder: pinv(protos^T), P x d_raw. Used by the oracle captioner.
  Matrix<float> decoder;

  int size() const noexcept { return cfg.P; }
  Matrix<float> special(QType q) const { return specials.row(static_cast<int>(q)); }
};

PrototypeBank gen_prototypes(const BankConfig& cfg, std::uint64_t seed);

/// Largest |cos| between two distinct prototypes.
double max_pairwise_cosine(const PrototypeBank& bank);

}  // namespace vegas::synth
