#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_helpers.hpp"
#include "vegas/diffcore/adam.hpp"
#include "vegas/evalharness.hpp"
#include "vegas/lgs.hpp"
#include "vegas/verify.hpp"

using namespace vegas;
using namespace vegas::lgs;
using vegas::testing::random_matrix;

namespace {

struct Fixture {
  ParamStore<double> store;
  ScorerParams p;
};

Fixture scorer(Eigen::Index d_in, Eigen::Index d_text, Eigen::Index d_model, int heads, std::uint64_t seed) {
  Fixture f;
  RngStream rng(seed, {5, 0, 0});
  f.p = make_scorer(f.store, d_in, d_text, d_model, heads, rng);
  return f;
}

Matrix<double> scores_of(const Fixture& f, const Matrix<double>& frames, const LanguageHint<double>& hint) {
  ParamStore<double>& store = const_cast<ParamStore<double>&>(f.store);
  Tape<double> tape(store);
  return score_frames(tape, f.p, tape.constant(frames), hint).value();
}

// softmax cross-entropy of the scores against each target frame, averaged
void train_step(Fixture& f, const Matrix<double>& frames, const LanguageHint<double>& hint,
                const std::vector<int>& targets, double lr, int step) {
  Tape<double> tape(f.store);
  auto s = score_frames(tape, f.p, tape.constant(frames), hint);
  std::vector<Var<double>> rows(targets.size(), s);
  auto loss = softmax_cross_entropy(concat_rows<double>(std::span<const Var<double>>(rows)),
                                    std::span<const int>(targets));
  tape.backward(loss);
  auto g = f.store.make_grad_set();
  tape.accumulate(g);
  f.store.set_grads(g);
  AdamOptions opt{lr};
  opt.skip_missing = true;  // the separator only sees fused hints
  adam_step(f.store, opt, step);
}

int argmax(const Matrix<double>& row) {
  Eigen::Index i, j;
  row.maxCoeff(&i, &j);
  return static_cast<int>(j);
}

}  // namespace

// ----------------------------------------------------------------- hints

TEST(FuseHint, QuestionOnly) {
  Matrix<double> q = Matrix<double>::Ones(3, 4);
  auto h = fuse_hint(q);
  EXPECT_EQ(h.kind, HintKind::question);
  EXPECT_EQ(h.length(), 3);
  EXPECT_FALSE(h.separator_row.has_value());
}

TEST(FuseHint, QuestionAnswerAddsSeparator) {
  Matrix<double> q = Matrix<double>::Ones(3, 4), a = Matrix<double>::Constant(2, 4, 2.0);
  auto h = fuse_hint(q, &a);
  EXPECT_EQ(h.kind, HintKind::question_answer);
  EXPECT_EQ(h.length(), 3 + 2 + 1);
  ASSERT_TRUE(h.separator_row.has_value());
  EXPECT_EQ(*h.separator_row, 3);
  EXPECT_EQ(h.tokens.bottomRows(2), a);
}

TEST(FuseHint, CaptionAnswerKind) {
  Matrix<double> s = Matrix<double>::Ones(4, 4), a = Matrix<double>::Ones(1, 4);
  EXPECT_EQ(fuse_hint(s, &a, HintKind::caption_answer).kind, HintKind::caption_answer);
}

TEST(FuseHint, EmptyQuestionIsInputError) {
  Matrix<double> q(0, 4);
  EXPECT_THROW(fuse_hint(q), InputError);
}

TEST(FuseHint, SeparatorIsLearnedEmbedding) {
  auto f = scorer(6, 5, 8, 2, 1);
  Matrix<double> q = Matrix<double>::Ones(2, 5), a = Matrix<double>::Ones(1, 5);
  auto h = fuse_hint(q, &a);
  Tape<double> tape(f.store);
  auto tok = hint_tokens(tape, f.p, h);
  EXPECT_EQ(tok.value().row(2), f.store.value(f.p.separator));
}

// ---------------------------------------------------------------- scoring

TEST(ScoreFrames, IdenticalFramesScoreEqual) {
  auto f = scorer(6, 5, 8, 2, 2);
  RngStream rng(3, {});
  Matrix<double> frame = random_matrix(rng, 1, 6);
  Matrix<double> frames = frame.replicate(10, 1);
  auto s = scores_of(f, frames, fuse_hint<double>(random_matrix(rng, 3, 5)));
  EXPECT_LT(s.maxCoeff() - s.minCoeff(), 1e-5);
}

TEST(ScoreFrames, PermutationEquivariant) {
  for (int trial = 0; trial < 20; ++trial) {
    auto f = scorer(6, 5, 8, 2, 10 + static_cast<std::uint64_t>(trial));
    RngStream rng(4, {0, 0, static_cast<std::uint64_t>(trial)});
    Matrix<double> frames = random_matrix(rng, 12, 6);
    auto hint = fuse_hint<double>(random_matrix(rng, 3, 5));
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Matrix<double> permuted(12, 6);
    for (int i = 0; i < 12; ++i) permuted.row(i) = frames.row(perm[static_cast<std::size_t>(i)]);
    auto s = scores_of(f, frames, hint), sp = scores_of(f, permuted, hint);
    for (int i = 0; i < 12; ++i) EXPECT_NEAR(sp(0, i), s(0, perm[static_cast<std::size_t>(i)]), 1e-5);
  }
}

TEST(ScoreFrames, WidthMismatchIsConfigError) {
  auto f = scorer(6, 5, 8, 2, 1);
  Tape<double> tape(f.store);
  EXPECT_THROW(score_frames(tape, f.p, tape.constant(Matrix<double>::Ones(4, 7)), fuse_hint<double>(Matrix<double>::Ones(1, 5))),
               ConfigError);
  EXPECT_THROW(score_frames(tape, f.p, tape.constant(Matrix<double>::Ones(4, 6)), fuse_hint<double>(Matrix<double>::Ones(1, 4))),
               ConfigError);
}

TEST(ScoreFrames, OverfitsOneSampleToTheMatchingFrame) {
  // identity projections, orthogonal frames, the hint is frame 2's feature
  auto f = scorer(8, 8, 8, 2, 6);
  f.store[f.p.proj_v.weight].value = Matrix<double>::Identity(8, 8);
  f.store[f.p.proj_q.weight].value = Matrix<double>::Identity(8, 8);
  Matrix<double> frames = Matrix<double>::Identity(6, 8);
  auto hint = fuse_hint<double>(frames.row(2));
  for (int step = 1; step <= 200; ++step) train_step(f, frames, hint, {2}, 1e-2, step);
  EXPECT_EQ(argmax(scores_of(f, frames, hint)), 2);
}

TEST(ScoreFrames, HintSensitivityAfterTraining) {
  // two concepts per video, each on half the frames; the hinted one must rank on top
  auto bank = synth::gen_prototypes({}, 3);
  const int n = 16, half = 8;
  auto f = scorer(32, 32, 32, 4, 7);
  auto make = [&](RngStream& rng, int& a, int& b, std::vector<int>& pos_a) {
    a = static_cast<int>(rng.below(16));
    do b = static_cast<int>(rng.below(16));
    while (b == a);
    pos_a = rng.choose(n, half);
    Matrix<double> frames(n, 32);
    std::vector<bool> is_a(n, false);
    for (int i : pos_a) is_a[static_cast<std::size_t>(i)] = true;
    for (int i = 0; i < n; ++i) {
      frames.row(i) = bank.protos.row(is_a[static_cast<std::size_t>(i)] ? a : b).cast<double>();
      for (int j = 0; j < 32; ++j) frames(i, j) += 0.2 * rng.normal();
    }
    return frames;
  };
  for (int step = 1; step <= 6000; ++step) {
    RngStream rng(8, {0, 0, static_cast<std::uint64_t>(step)});
    int a, b;
    std::vector<int> pos_a;
    auto frames = make(rng, a, b, pos_a);
    const bool ask_a = rng.below(2) == 0;
    std::vector<int> targets;
    for (int i = 0; i < n; ++i)
      if ((std::find(pos_a.begin(), pos_a.end(), i) != pos_a.end()) == ask_a) targets.push_back(i);
    train_step(f, frames, fuse_hint<double>(bank.words.row(ask_a ? a : b).cast<double>()), targets, 3e-3, step);
  }
  int agree = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    RngStream rng(9, {0, 0, static_cast<std::uint64_t>(t)});
    int a, b;
    std::vector<int> pos_a;
    auto frames = make(rng, a, b, pos_a);
    auto top_a = topk::hard_topk_indicator(scores_of(f, frames, fuse_hint<double>(bank.words.row(a).cast<double>())), half);
    auto top_b = topk::hard_topk_indicator(scores_of(f, frames, fuse_hint<double>(bank.words.row(b).cast<double>())), half);
    std::vector<int> pos_b;
    for (int i = 0; i < n; ++i)
      if (std::find(pos_a.begin(), pos_a.end(), i) == pos_a.end()) pos_b.push_back(i);
    agree += top_a.indices == pos_a && top_b.indices == pos_b;
  }
  EXPECT_GE(agree, 90) << "top set followed the hint in " << agree << " of " << trials << " held-out videos";
}

// --------------------------------------------------------------- sampling

TEST(SampleFrames, EvalModeGivesKAscendingFrames) {
  auto f = scorer(32, 32, 64, 4, 11);
  RngStream rng(12, {});
  Matrix<double> frames = random_matrix(rng, 32, 32);
  auto hint = fuse_hint<double>(random_matrix(rng, 4, 32));
  Tape<double> tape(f.store);
  topk::SelectionResult<double> info;
  auto out = sample_frames(tape, f.p, tape.constant(frames), hint, topk::TopKConfig{8, 0.05, 1, topk::Mode::eval},
                           RngStream(1, {}), Selector::perturbed, nullptr, &info);
  ASSERT_EQ(info.indices.size(), 8u);
  EXPECT_TRUE(std::is_sorted(info.indices.begin(), info.indices.end()));
  EXPECT_EQ(out.rows(), 8);
  for (int r = 0; r < 8; ++r) EXPECT_EQ(out.value().row(r), frames.row(info.indices[static_cast<std::size_t>(r)]));
}

TEST(SampleFrames, TrainModeReturnsSoftFeatures) {
  auto f = scorer(6, 5, 8, 2, 13);
  RngStream rng(14, {});
  Matrix<double> frames = random_matrix(rng, 10, 6);
  Tape<double> tape(f.store);
  topk::SelectionResult<double> info;
  auto out = sample_frames(tape, f.p, tape.constant(frames), fuse_hint<double>(random_matrix(rng, 2, 5)),
                           topk::TopKConfig{3, 0.5, 200, topk::Mode::train}, RngStream(2, {}), Selector::perturbed,
                           nullptr, &info);
  EXPECT_LT((out.value() - info.indicator * frames).cwiseAbs().maxCoeff(), 1e-12);
  for (int r = 0; r < 3; ++r) EXPECT_NEAR(info.indicator.row(r).sum(), 1.0, 1e-9);
}

TEST(SampleFrames, KGreaterThanNIsDimensionError) {
  auto f = scorer(6, 5, 8, 2, 1);
  Tape<double> tape(f.store);
  EXPECT_THROW(sample_frames(tape, f.p, tape.constant(Matrix<double>::Ones(4, 6)), fuse_hint<double>(Matrix<double>::Ones(1, 5)),
                             topk::TopKConfig{5, 0.05, 1, topk::Mode::eval}, RngStream(1, {})),
               DimensionError);
}

TEST(SampleFrames, UntrainedAndUniformRecallAtHypergeometricMean) {
  auto bank = synth::gen_prototypes({}, 1);
  synth::GenConfig gc;
  auto data = synth::gen_dataset(bank, gc, synth::Kind::descriptive, 600, 21);
  pipeline::ModelDims dims;
  auto model = pipeline::build_model<float>(dims, 5);
  eval::EvalOptions eo;
  const double untrained = eval::sampler_diagnostics(model, data, eo).recall_at_k;
  eo.selector = Selector::uniform;
  const double uniform = eval::sampler_diagnostics(model, data, eo).recall_at_k;
  // 11 of 32 frames relevant: E|S ∩ R| / min(k, |R|) = 8 * 11 / 32 / 8
  EXPECT_NEAR(uniform, 11.0 / 32.0, 0.03);
  EXPECT_NEAR(untrained, 11.0 / 32.0, 0.06);
}

// ------------------------------------------------------- gradient checks

TEST(LgsGradcheck, ScoreFramesAndEndToEnd) {
  verify::SuiteOptions so;
  for (const auto& r : verify::check_lgs(so))
    EXPECT_TRUE(r.passed) << r.op << " err " << r.max_rel_err << " tol " << r.tol << " (" << r.detail << ")";
}

TEST(LgsGradcheck, CorruptedGradientsFail) {
  verify::SuiteOptions so;
  so.corrupt = true;
  so.trials = 10;
  for (const auto& r : verify::check_lgs(so)) EXPECT_FALSE(r.passed) << r.op;
}
