#pragma once

#include <array>
#include <string>
#include <vector>

#include "vegas/diffcore.hpp"
#include "vegas/lgs.hpp"
#include "vegas/ptopk.hpp"
#include "vegas/synthworld/generators.hpp"
#include "vegas/tam.hpp"

namespace vegas::pipeline {

struct ModelDims {
  int n = 32;
  int k = 8;
  int d_raw = 32;
  int d_text = 32;
  int d = 32;
  int d_model = 64;
  int heads = 4;
  int P = 16;
  int num_emotions = 4;
  /// Init scale of the reader's per-slot template embeddings (row norm about slot_scale).
  double slot_scale = 1.0;
  /// Start the projector and reader near identity maps, so that visual and
  /// text tokens share one space and an option already matches frames that
  /// show it. Stands in for the pretrained projector and language model.
  bool aligned_init = true;
  /// Attention sharpness of the aligned reader pool.
  double align_gain = 4.0;

  void validate() const;
};

/// Which inputs the reader sees. The options are always scored.
enum class Mask { A, QA, QAV, QAVS };
std::string mask_name(Mask m);
Mask parse_mask(const std::string& s);
inline bool has_question(Mask m) { return m != Mask::A; }
inline bool has_visual(Mask m) { return m == Mask::QAV || m == Mask::QAVS; }
inline bool has_subtitle(Mask m) { return m == Mask::QAVS; }

/// Context block order: order1 = <mm><subtitle><question>, order2 = <question><mm><subtitle>.
enum class Ordering { order1, order2 };

struct StpParams {
  LinearParams proj_v;
  LinearParams proj_sub;
  LinearParams proj_opt;
};

struct ReaderParams {
  ParamId slots;  // 3 x d, one per template position
  ParamId query;  // 1 x d
  LinearParams query_proj;
  LayerNormParams ln_ctx;
  AttentionParams pool;
  LayerNormParams ln_ffn;
  LinearParams ffn_in;
  LinearParams ffn_out;
  ParamId bilinear;  // d x d
  ParamId unary;  // 1 x d
  LinearParams caption_head;
};

template <typename T>
struct Model {
  ModelDims dims;
  ParamStore<T> store;
  tam::EncoderEmulation encoder;
  lgs::ScorerParams scorer;
  tam::TamParams tam;
  StpParams stp;
  ReaderParams reader;
  LinearParams emotion_head;
};

/// Parameter groups, in the order their names appear in checkpoints.
inline const std::array<const char*, 6> kGroups{"encoder", "scorer", "tam", "stp", "reader", "emotion_head"};

template <typename T>
Model<T> build_model(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Model<T> m;
  m.dims = dims;
  RngStream root(seed, {2, 0, 0});
  auto r_enc = root.child(0), r_sc = root.child(1), r_tam = root.child(2), r_stp = root.child(3),
       r_rd = root.child(4), r_emo = root.child(5);
  auto& s = m.store;
  m.encoder = tam::make_encoder(s, dims.k, dims.d_raw, r_enc);
  m.scorer = lgs::make_scorer(s, dims.d_raw, dims.d_text, dims.d_model, dims.heads, r_sc);
  m.tam = tam::init_tam(s, dims.k, dims.d_raw, dims.heads, r_tam);
  m.stp.proj_v = make_linear(s, "stp.proj_v", "stp", dims.d_raw, dims.d, r_stp);
  m.stp.proj_sub = make_linear(s, "stp.proj_sub", "stp", dims.d_text, dims.d, r_stp);
  m.stp.proj_opt = make_linear(s, "stp.proj_opt", "stp", dims.d_text, dims.d, r_stp);
  auto& rd = m.reader;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dims.d));
  rd.slots = s.add_normal("reader.slots", "reader", 3, dims.d, dims.slot_scale * inv_sqrt_d, r_rd);
  rd.query = s.add_normal("reader.query", "reader", 1, dims.d, inv_sqrt_d, r_rd);
  rd.query_proj = make_linear(s, "reader.query_proj", "reader", dims.d, dims.d, r_rd);
  rd.ln_ctx = make_layer_norm(s, "reader.ln_ctx", "reader", dims.d);
  rd.pool = make_attention(s, "reader.pool", "reader", dims.d, dims.heads, r_rd);
  rd.ln_ffn = make_layer_norm(s, "reader.ln_ffn", "reader", dims.d);
  rd.ffn_in = make_linear(s, "reader.ffn_in", "reader", dims.d, 2 * dims.d, r_rd);
  rd.ffn_out = make_linear(s, "reader.ffn_out", "reader", 2 * dims.d, dims.d, r_rd);
  rd.bilinear = s.add_normal("reader.bilinear", "reader", dims.d, dims.d, inv_sqrt_d, r_rd);
  rd.unary = s.add_normal("reader.unary", "reader", 1, dims.d, inv_sqrt_d, r_rd);
  rd.caption_head = make_linear(s, "reader.caption_head", "reader", dims.d, dims.P, r_rd);
  m.emotion_head = make_linear(s, "emotion_head", "emotion_head", dims.d, dims.num_emotions, r_emo);
  if (dims.aligned_init) {
    // random init shrunk to a perturbation of a (rectangular) identity
    auto align = [&](ParamId id, double gain) {
      auto& w = s[id].value;
      w = (T(0.1) * w + T(gain) * Matrix<T>::Identity(w.rows(), w.cols())).eval();
    };
    for (const auto* lp : {&m.stp.proj_v, &m.stp.proj_sub, &m.stp.proj_opt, &rd.query_proj})
      align(lp->weight, 1.0);
    align(rd.pool.query.weight, dims.align_gain);
    align(rd.pool.key.weight, 1.0);
    align(rd.pool.value.weight, 1.0);
    align(rd.pool.output.weight, 1.0);
    align(rd.bilinear, 1.0);
    s[rd.ffn_out.weight].value *= T(0.1);
  }
  return m;
}

struct ForwardOptions {
  Mask mask = Mask::QAVS;
  Ordering ordering = Ordering::order1;
  lgs::Selector selector = lgs::Selector::perturbed;
  /// train: perturbed top-k with the MC gradient; eval: hard top-k.
  topk::Mode sampler_mode = topk::Mode::eval;
  /// Fuse the correct answer into the sampler hint (only honored in train mode).
  bool hint_with_answer = false;
  /// Chance that a train-mode hint actually carries the answer; otherwise the
  /// question alone is used, as at inference.
  double answer_hint_prob = 1.0;
  bool use_tam = true;
  double sigma = 0.05;
  int num_samples = 500;
};

template <typename T>
struct ForwardTrace {
  topk::SelectionResult<T> selection;
  lgs::HintKind hint_kind = lgs::HintKind::question;
  bool sampled = false;
};

namespace detail {

template <typename T>
Var<T> project(Tape<T>& tape, const LinearParams& p, const Matrix<float>& x) {
  return linear(tape, p, tape.constant(x.template cast<T>()));
}

/// Sampler + TAM + projector: the k visual tokens (k x d).
template <typename T>
Var<T> visual_tokens(Tape<T>& tape, const Model<T>& m, const synth::Scenario& s, const lgs::LanguageHint<T>& hint,
                     const ForwardOptions& opt, const RngStream& rng, ForwardTrace<T>* trace) {
  if (s.frames.rows() == 0) throw InputError("scenario has no frames");
  if (s.frames.cols() != m.dims.d_raw) throw InputError("frame width differs from model d_raw");
  auto raw = tape.constant(s.frames.template cast<T>());
  auto f_v0 = tam::emulate_encoder(tape, m.store, m.encoder, raw);
  topk::TopKConfig cfg{m.dims.k, opt.sigma, opt.num_samples, opt.sampler_mode};
  topk::SelectionResult<T> sel;
  auto f_v = lgs::sample_frames(tape, m.scorer, f_v0, hint, cfg, rng, opt.selector, &s.relevant_mask, &sel);
  if (trace) {
    trace->selection = std::move(sel);
    trace->hint_kind = hint.kind;
    trace->sampled = true;
  }
  if (opt.use_tam) f_v = tam::tam_forward(tape, m.tam, f_v);
  return linear(tape, m.stp.proj_v, f_v);
}

/// Context blocks with their template-slot embeddings, in template order.
template <typename T>
Var<T> ordered_context(Tape<T>& tape, const Model<T>& m, const std::array<std::optional<Var<T>>, 3>& by_role,
                       Ordering ordering) {
  // template position of each role: mm, subtitle, question
  const std::array<int, 3> pos = ordering == Ordering::order1 ? std::array<int, 3>{0, 1, 2} : std::array<int, 3>{1, 2, 0};
  auto slots = tape.param(m.reader.slots);
  std::array<std::optional<Var<T>>, 3> placed;
  for (int role = 0; role < 3; ++role) {
    const auto& block = by_role[static_cast<std::size_t>(role)];
    if (!block) continue;
    const int p = pos[static_cast<std::size_t>(role)];
    placed[static_cast<std::size_t>(p)] = add_row(*block, slice_rows(slots, p, 1));
  }
  std::vector<Var<T>> parts;
  for (auto& b : placed)
    if (b) parts.push_back(*b);
  return layer_norm(tape, m.reader.ln_ctx, concat_rows<T>(std::span<const Var<T>>(parts)));
}

/// Each query row attends over the context, then a feed-forward residual.
template <typename T>
Var<T> read_context(Tape<T>& tape, const Model<T>& m, Var<T> queries, Var<T> ctx) {
  auto h = add(queries, multi_head_attention(tape, m.reader.pool, queries, ctx));
  return add(h, linear(tape, m.reader.ffn_out, gelu(linear(tape, m.reader.ffn_in, layer_norm(tape, m.reader.ln_ffn, h)))));
}

/// Learned query plus a projection of the mean question token.
template <typename T>
Var<T> question_summary(Tape<T>& tape, const Model<T>& m, Var<T> question) {
  return add(tape.param(m.reader.query), linear(tape, m.reader.query_proj, mean_rows(question)));
}

}  // namespace detail

/// Option logits (1 x 4) for one scenario under a modality mask. Each
/// option, shifted by the question summary, attends over the ordered context;
/// its logit is a bilinear match between what it read and itself, plus a
/// context-free unary term.
template <typename T>
Var<T> forward_answer(Tape<T>& tape, const Model<T>& m, const synth::Scenario& s, const ForwardOptions& opt,
                      const RngStream& rng, ForwardTrace<T>* trace = nullptr) {
  if (s.options.rows() != 4) throw InputError("scenario must have 4 options");
  if (s.hint.rows() == 0) throw InputError("scenario has an empty question");
  if (has_subtitle(opt.mask) && s.subtitle.rows() == 0) throw InputError("mask needs subtitles the scenario lacks");

  Var<T> question = has_question(opt.mask)
                        ? detail::project(tape, m.stp.proj_opt, s.hint)
                        : detail::project(tape, m.stp.proj_opt, Matrix<float>::Zero(1, s.hint.cols()));
  std::array<std::optional<Var<T>>, 3> roles;
  if (has_visual(opt.mask)) {
    Matrix<T> q = s.hint.template cast<T>();
    lgs::LanguageHint<T> hint;
    const bool fuse = opt.hint_with_answer && opt.sampler_mode == topk::Mode::train &&
                      (opt.answer_hint_prob >= 1.0 || rng.child(0x68696e74).uniform() < opt.answer_hint_prob);
    if (fuse) {
      Matrix<T> a = s.options.row(s.answer_idx).template cast<T>();
      hint = lgs::fuse_hint<T>(q, &a);
    } else {
      hint = lgs::fuse_hint<T>(q);
    }
    roles[0] = detail::visual_tokens(tape, m, s, hint, opt, rng, trace);
  }
  if (has_subtitle(opt.mask)) roles[1] = detail::project(tape, m.stp.proj_sub, s.subtitle);
  roles[2] = question;
  auto ctx = detail::ordered_context(tape, m, roles, opt.ordering);
  // every option reads the context with its own query
  auto opts = detail::project(tape, m.stp.proj_opt, s.options);
  auto h = detail::read_context(tape, m, add_row(opts, tape.param(m.reader.query)), ctx);
  auto match = mul(matmul(h, tape.param(m.reader.bilinear)), opts);
  auto bil = transpose(matmul(match, tape.constant(Matrix<T>::Ones(m.dims.d, 1))));
  return add(bil, matmul_nt(tape.param(m.reader.unary), opts));
}

/// Presence logits (1 x P) for the concepts visible in the selected frames.
/// The sampler is hinted by the caption words fused with the answer word.
template <typename T>
Var<T> forward_caption(Tape<T>& tape, const Model<T>& m, const synth::PrototypeBank& bank, const synth::Scenario& s,
                       const ForwardOptions& opt, const RngStream& rng, ForwardTrace<T>* trace = nullptr) {
  if (s.kind != synth::Kind::nuanced) throw InputError("caption forward needs a nuanced sample");
  Matrix<T> cap(static_cast<Eigen::Index>(std::max<std::size_t>(s.caption.size(), 1)), bank.cfg.d_text);
  if (s.caption.empty()) {
    cap.row(0) = bank.special(synth::QType::describe).template cast<T>();
  } else {
    for (std::size_t i = 0; i < s.caption.size(); ++i)
      cap.row(static_cast<Eigen::Index>(i)) = bank.words.row(s.caption[i]).template cast<T>();
  }
  Matrix<T> a = s.options.row(s.answer_idx).template cast<T>();
  auto hint = lgs::fuse_hint<T>(cap, &a, lgs::HintKind::caption_answer);
  auto question = detail::project(tape, m.stp.proj_opt, bank.special(synth::QType::describe));
  std::array<std::optional<Var<T>>, 3> roles;
  roles[0] = detail::visual_tokens(tape, m, s, hint, opt, rng, trace);
  roles[2] = question;
  auto ctx = detail::ordered_context(tape, m, roles, opt.ordering);
  auto h = detail::read_context(tape, m, detail::question_summary(tape, m, question), ctx);
  return linear(tape, m.reader.caption_head, h);
}

template <typename T>
Matrix<T> caption_targets(const synth::Scenario& s, int P) {
  Matrix<T> t = Matrix<T>::Zero(1, P);
  for (int c : s.caption) t(0, c) = T(1);
  return t;
}

/// Emotion logits (1 x num_emotions) through the visual projector.
template <typename T>
Var<T> forward_emotion(Tape<T>& tape, const Model<T>& m, const Matrix<float>& feature) {
  if (feature.cols() != m.dims.d_raw) throw InputError("emotion feature width differs from d_raw");
  return linear(tape, m.emotion_head, detail::project(tape, m.stp.proj_v, feature));
}

/// FNV-1a over the raw bytes of every parameter in `group`.
template <typename T>
std::uint64_t group_hash(const ParamStore<T>& store, const std::string& group) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : store) {
    if (e.group != group) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(e.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(e.value.size()) * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace vegas::pipeline
