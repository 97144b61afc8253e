#include <gtest/gtest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "vegas/evalharness.hpp"
#include "vegas/pipeline/trainer.hpp"
#include "vegas/tam.hpp"
#include "vegas/verify.hpp"

using namespace vegas;
using namespace vegas::tam;
using vegas::testing::random_matrix;

namespace {

double sample_std(const Matrix<double>& m) {
  const double mean = m.mean();
  return std::sqrt((m.array() - mean).square().sum() / static_cast<double>(m.size() - 1));
}

}  // namespace

// ------------------------------------------------------ encoder emulation

TEST(EncoderEmulation, NEqualsKHasNoWrap) {
  RngStream rng(1, {});
  Matrix<double> codes = random_matrix(rng, 8, 4), raw = random_matrix(rng, 8, 4);
  EXPECT_EQ(emulate_encoder(raw, codes), raw + codes);
}

TEST(EncoderEmulation, PositionsKApartShareCodes) {
  RngStream rng(2, {});
  Matrix<double> codes = random_matrix(rng, 8, 4);
  auto w = wrapped_codes(codes, 16);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(w.row(i), w.row(i + 8));
}

TEST(EncoderEmulation, DefaultSizesRepeatCodesFourTimes) {
  Matrix<double> codes(8, 1);
  for (int i = 0; i < 8; ++i) codes(i, 0) = i;
  auto w = wrapped_codes(codes, 32);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(w(i, 0), i % 8);
}

TEST(EncoderEmulation, TableIsFrozen) {
  ParamStore<double> store;
  RngStream rng(3, {});
  auto enc = make_encoder(store, 8, 4, rng);
  EXPECT_FALSE(store[enc.t_enc].trainable);
}

TEST(EncoderEmulation, WidthMismatchIsDimensionError) {
  EXPECT_THROW(emulate_encoder(Matrix<double>(Matrix<double>::Ones(4, 3)), Matrix<double>(Matrix<double>::Ones(2, 4))), DimensionError);
}

// ------------------------------------------------------------------- init

TEST(InitTam, TemporalCodeStdIsInverseSqrtD) {
  ParamStore<double> store;
  RngStream rng(4, {});
  auto p = init_tam(store, 8, 64, 4, rng);
  EXPECT_NEAR(sample_std(store.value(p.t_s)), 0.125, 0.0125);
}

TEST(InitTam, UnitWidthGivesUnitStd) {
  ParamStore<double> store;
  RngStream rng(5, {});
  auto p = init_tam(store, 4000, 1, 1, rng);
  EXPECT_NEAR(sample_std(store.value(p.t_s)), 1.0, 0.05);
}

TEST(InitTam, FixedSeedIsDeterministic) {
  ParamStore<double> a, b;
  RngStream ra(6, {}), rb(6, {});
  auto pa = init_tam(a, 8, 16, 2, ra);
  auto pb = init_tam(b, 8, 16, 2, rb);
  EXPECT_EQ(a.value(pa.t_s), b.value(pb.t_s));
}

TEST(InitTam, NonPositiveSizesAreConfigErrors) {
  ParamStore<double> store;
  RngStream rng(7, {});
  EXPECT_THROW(init_tam(store, 0, 4, 1, rng), ConfigError);
  EXPECT_THROW(init_tam(store, 4, 0, 1, rng), ConfigError);
}

// ---------------------------------------------------------------- forward

TEST(TamForward, ShapePreserved) {
  for (auto [k, d, heads] : {std::tuple{1, 4, 1}, std::tuple{8, 32, 4}, std::tuple{3, 6, 2}}) {
    ParamStore<double> store;
    RngStream rng(8, {});
    auto p = init_tam(store, k, d, heads, rng);
    Tape<double> tape(store);
    auto out = tam_forward(tape, p, tape.constant(random_matrix(rng, k, d)));
    EXPECT_EQ(out.rows(), k);
    EXPECT_EQ(out.cols(), d);
  }
}

TEST(TamForward, ZeroOutputProjectionIsResidualPath) {
  ParamStore<double> store;
  RngStream rng(9, {});
  auto p = init_tam(store, 8, 16, 4, rng);
  // fresh init already zeroes the output projection
  EXPECT_EQ(store.value(p.attn.output.weight).cwiseAbs().maxCoeff(), 0.0);
  Matrix<double> f = random_matrix(rng, 8, 16);
  Tape<double> tape(store);
  auto out = tam_forward(tape, p, tape.constant(f));
  EXPECT_EQ(out.value(), f + store.value(p.t_s));
}

TEST(TamForward, ShapeMismatchIsDimensionError) {
  ParamStore<double> store;
  RngStream rng(10, {});
  auto p = init_tam(store, 8, 16, 4, rng);
  Tape<double> tape(store);
  EXPECT_THROW(tam_forward(tape, p, tape.constant(Matrix<double>::Ones(7, 16))), DimensionError);
}

TEST(TamForward, GradientsReachInputAndTemporalCode) {
  ParamStore<double> store;
  RngStream rng(11, {});
  auto p = init_tam(store, 4, 8, 2, rng);
  store[p.attn.output.weight].value = random_matrix(rng, 8, 8, 0.3);
  Tape<double> tape(store);
  auto in = tape.param(store.add("input", "x", random_matrix(rng, 4, 8)));
  auto loss = vegas::testing::contract(tam_forward(tape, p, in), random_matrix(rng, 4, 8));
  tape.backward(loss);
  auto g = store.make_grad_set();
  tape.accumulate(g);
  EXPECT_GT(g.grads[store.find("input").index].norm(), 0.0);
  EXPECT_GT(g.grads[p.t_s.index].norm(), 0.0);
}

TEST(TamGradcheck, AllParametersAndInput) {
  verify::SuiteOptions so;
  for (const auto& r : verify::check_tam(so)) EXPECT_TRUE(r.passed) << r.op << " err " << r.max_rel_err;
  so.corrupt = true;
  for (const auto& r : verify::check_tam(so)) EXPECT_FALSE(r.passed) << r.op;
}

// --------------------------------------------------- ordering benchmark

TEST(TamTraining, TemporalCodesStayDistinct) {
  auto bank = synth::gen_prototypes({}, 1);
  synth::GenConfig gc;
  auto data = synth::gen_dataset(bank, gc, synth::Kind::ordering, 200, 31);
  auto model = pipeline::build_model<float>({}, 3);
  auto cfg = pipeline::default_stage_config(pipeline::Stage::mcq);
  cfg.selector = lgs::Selector::uniform;
  cfg.masks = {{pipeline::Mask::QAV, 1.0}};
  cfg.epochs = 1;
  pipeline::TrainState st;
  const Matrix<float> before = model.store.value(model.tam.t_s);
  pipeline::train_stage(model, data, bank, cfg, 5, st);
  const Matrix<float>& t_s = model.store.value(model.tam.t_s);
  EXPECT_NE(t_s, before);
  double closest = 1e30;
  for (int i = 0; i < t_s.rows(); ++i)
    for (int j = i + 1; j < t_s.rows(); ++j) closest = std::min(closest, static_cast<double>((t_s.row(i) - t_s.row(j)).norm()));
  EXPECT_GT(closest, 0.0);
}
