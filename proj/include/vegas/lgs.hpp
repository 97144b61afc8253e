#pragma once

#include <optional>
#include <string>

#include "vegas/diffcore.hpp"
#include "vegas/ptopk.hpp"

namespace vegas::lgs {

enum class HintKind { question, question_answer, caption_answer };

/// Hint token sequence for the scorer. When `separator_row` is set, that row
/// is a placeholder the scorer replaces with its learned separator embedding.
template <typename T>
struct LanguageHint {
  Matrix<T> tokens;
  HintKind kind = HintKind::question;
  std::optional<Eigen::Index> separator_row;

  Eigen::Index length() const { return tokens.rows(); }
};

template <typename T>
LanguageHint<T> fuse_hint(const Matrix<T>& question, const Matrix<T>* answer = nullptr,
                          HintKind with_answer = HintKind::question_answer) {
  if (question.rows() == 0) throw InputError("fuse_hint: empty question");
  LanguageHint<T> h;
  if (!answer) {
    h.tokens = question;
    h.kind = HintKind::question;
    return h;
  }
  if (answer->cols() != question.cols())
    throw DimensionError("fuse_hint: answer width " + std::to_string(answer->cols()) + " vs question width " +
                         std::to_string(question.cols()));
  h.tokens.resize(question.rows() + 1 + answer->rows(), question.cols());
  h.tokens.topRows(question.rows()) = question;
  h.tokens.row(question.rows()).setZero();
  h.tokens.bottomRows(answer->rows()) = *answer;
  h.separator_row = question.rows();
  h.kind = with_answer;
  return h;
}

struct ScorerParams {
  LinearParams proj_v;
  LinearParams proj_q;
  LayerNormParams ln_frames;
  LayerNormParams ln_hint;
  AttentionParams cross;
  LayerNormParams ln_ffn;
  LinearParams ffn_in;
  LinearParams ffn_out;
  LinearParams head;
  ParamId separator;
  Eigen::Index d_in = 0;
  Eigen::Index d_text = 0;
  Eigen::Index d_model = 0;
};

template <typename T>
ScorerParams make_scorer(ParamStore<T>& store, Eigen::Index d_in, Eigen::Index d_text, Eigen::Index d_model,
                         int heads, RngStream& rng, const std::string& group = "scorer") {
  if (d_model % heads != 0) throw ConfigError("scorer: d_model not divisible by heads");
  ScorerParams p;
  p.d_in = d_in;
  p.d_text = d_text;
  p.d_model = d_model;
  p.proj_v = make_linear(store, "scorer.proj_v", group, d_in, d_model, rng);
  p.proj_q = make_linear(store, "scorer.proj_q", group, d_text, d_model, rng);
  p.ln_frames = make_layer_norm(store, "scorer.ln_frames", group, d_model);
  p.ln_hint = make_layer_norm(store, "scorer.ln_hint", group, d_model);
  p.cross = make_attention(store, "scorer.cross", group, d_model, heads, rng);
  p.ln_ffn = make_layer_norm(store, "scorer.ln_ffn", group, d_model);
  p.ffn_in = make_linear(store, "scorer.ffn_in", group, d_model, 2 * d_model, rng);
  p.ffn_out = make_linear(store, "scorer.ffn_out", group, 2 * d_model, d_model, rng);
  p.head = make_linear(store, "scorer.head", group, d_model, 1, rng);
  p.separator = store.add_normal("scorer.separator", group, 1, d_text, 1.0 / std::sqrt(static_cast<double>(d_text)), rng);
  return p;
}

/// Hint tokens on the tape, with the separator placeholder swapped for the learned embedding.
template <typename T>
Var<T> hint_tokens(Tape<T>& tape, const ScorerParams& p, const LanguageHint<T>& hint) {
  if (hint.tokens.cols() != p.d_text)
    throw ConfigError("scorer: hint width " + std::to_string(hint.tokens.cols()) + " vs d_text " +
                      std::to_string(p.d_text));
  if (!hint.separator_row) return tape.constant(hint.tokens);
  const Eigen::Index s = *hint.separator_row;
  const Eigen::Index tail = hint.tokens.rows() - s - 1;
  std::vector<Var<T>> parts{tape.constant(hint.tokens.topRows(s)), tape.param(p.separator)};
  if (tail > 0) parts.push_back(tape.constant(hint.tokens.bottomRows(tail)));
  return concat_rows<T>(std::span<const Var<T>>(parts));
}

/// Per-frame relevance scores (1 x n). Frames attend to hint tokens through
/// one pre-norm cross-attention block; no positional signal enters.
template <typename T>
Var<T> score_frames(Tape<T>& tape, const ScorerParams& p, Var<T> frames, const LanguageHint<T>& hint) {
  if (frames.cols() != p.d_in)
    throw ConfigError("scorer: frame width " + std::to_string(frames.cols()) + " vs d_in " + std::to_string(p.d_in));
  auto x = linear(tape, p.proj_v, frames);
  auto h = linear(tape, p.proj_q, hint_tokens(tape, p, hint));
  x = add(x, multi_head_attention(tape, p.cross, layer_norm(tape, p.ln_frames, x), layer_norm(tape, p.ln_hint, h)));
  x = add(x, linear(tape, p.ffn_out, gelu(linear(tape, p.ffn_in, layer_norm(tape, p.ln_ffn, x)))));
  // standardized across frames, so the top-k noise scale is relative to the score spread
  auto raw = transpose(linear(tape, p.head, x));
  const auto n = raw.cols();
  return layer_norm(raw, tape.constant(Matrix<T>::Ones(1, n)), tape.constant(Matrix<T>::Zero(1, n)));
}

enum class Selector { perturbed, uniform, oracle };

/// score -> top-k -> gather. Uniform and oracle selectors skip the scorer and
/// pick a random / ground-truth k-subset (ablation and upper bound).
template <typename T>
Var<T> sample_frames(Tape<T>& tape, const ScorerParams& p, Var<T> frames, const LanguageHint<T>& hint,
                     const topk::TopKConfig& cfg, const RngStream& rng, Selector selector = Selector::perturbed,
                     const std::vector<bool>* relevant = nullptr, topk::SelectionResult<T>* info = nullptr) {
  const auto n = static_cast<int>(frames.rows());
  cfg.validate(n);
  Var<T> indicator;
  if (selector == Selector::perturbed) {
    indicator = topk::perturbed_topk(score_frames(tape, p, frames, hint), cfg, rng, info);
  } else {
    std::vector<int> picked;
    if (selector == Selector::uniform) {
      auto r = rng.child(0x756e69);
      picked = r.choose(n, cfg.k);
    } else {
      if (!relevant || static_cast<int>(relevant->size()) != n)
        throw InputError("oracle selector needs a relevant mask of length n");
      for (int i = 0; i < n && static_cast<int>(picked.size()) < cfg.k; ++i)
        if ((*relevant)[static_cast<std::size_t>(i)]) picked.push_back(i);
      for (int i = 0; i < n && static_cast<int>(picked.size()) < cfg.k; ++i)
        if (!(*relevant)[static_cast<std::size_t>(i)]) picked.push_back(i);
    }
    auto sel = topk::indicator_from_indices<T>(std::move(picked), n);
    indicator = tape.constant(sel.indicator);
    if (info) *info = std::move(sel);
  }
  return matmul(indicator, frames);
}

}  // namespace vegas::lgs
