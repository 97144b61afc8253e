#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "vegas/errors.hpp"
#include "vegas/pipeline/checkpoint.hpp"
#include "vegas/pipeline/trainer.hpp"
#include "vegas/synthworld/generators.hpp"

using namespace vegas;
using namespace vegas::pipeline;
namespace fs = std::filesystem;

namespace {

const synth::PrototypeBank& bank() {
  static const auto b = synth::gen_prototypes({}, 1);
  return b;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vegas_pipe_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

bool same_values(const Model<float>& a, const Model<float>& b) {
  auto ia = a.store.begin();
  for (auto ib = b.store.begin(); ib != b.store.end(); ++ia, ++ib)
    if (ia->value != ib->value || ia->m != ib->m || ia->v != ib->v) return false;
  return true;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// ----------------------------------------------------------------- freezing

TEST(Freeze, GiftOneLeavesReaderAndScorerAlone) {
  auto model = build_model<float>({}, 3);
  auto data = synth::gen_emotion_dataset(bank(), 0.05, 64, 4);
  const auto reader = group_hash(model.store, "reader");
  const auto scorer = group_hash(model.store, "scorer");
  const auto stp = group_hash(model.store, "stp");
  TrainState st;
  train_stage_gift1(model, data, default_stage_config(Stage::gift1), 5, st);
  EXPECT_EQ(group_hash(model.store, "reader"), reader);
  EXPECT_EQ(group_hash(model.store, "scorer"), scorer);
  EXPECT_NE(group_hash(model.store, "stp"), stp);
}

TEST(Freeze, EncoderCannotBeTrained) {
  auto cfg = default_stage_config(Stage::lgs);
  cfg.lr["encoder"] = 1e-3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = default_stage_config(Stage::lgs);
  cfg.lr["nonsense"] = 1e-3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LgsStage, OneStepMovesScorerAndTam) {
  auto model = build_model<float>({}, 3);
  auto data = synth::gen_dataset(bank(), {}, synth::Kind::descriptive, 2, 8);
  auto cfg = default_stage_config(Stage::lgs);
  cfg.max_steps = 1;
  cfg.answer_hint_prob = 1.0;
  const auto scorer = group_hash(model.store, "scorer");
  const auto tam = group_hash(model.store, "tam");
  TrainState st;
  auto log = train_stage(model, data, bank(), cfg, 5, st);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(st.step, 1);
  EXPECT_NE(group_hash(model.store, "scorer"), scorer);
  EXPECT_NE(group_hash(model.store, "tam"), tam);
}

TEST(LgsStage, LossFallsOverFirstHundredSteps) {
  auto model = build_model<float>({}, 3);
  auto data = synth::gen_dataset(bank(), {}, synth::Kind::descriptive, 240, 9);
  auto cfg = default_stage_config(Stage::lgs);
  cfg.max_steps = 120;
  TrainState st;
  auto log = train_stage(model, data, bank(), cfg, 5, st);
  ASSERT_EQ(log.size(), 120u);
  auto avg = [&](int from) {
    double s = 0;
    for (int i = from; i < from + 20; ++i) s += log[static_cast<std::size_t>(i)].loss;
    return s / 20;
  };
  EXPECT_LT(avg(100), avg(0));
}

TEST(Forward, EvalHintIsQuestionOnly) {
  auto model = build_model<float>({}, 3);
  auto s = synth::gen_descriptive_composite(bank(), {}, {1, 0, 0});
  ForwardOptions opt;
  opt.mask = Mask::QAV;
  opt.hint_with_answer = true;
  opt.sampler_mode = topk::Mode::eval;
  ForwardTrace<float> trace;
  Tape<float> tape(model.store);
  forward_answer(tape, model, s, opt, RngStream(1, {}), &trace);
  ASSERT_TRUE(trace.sampled);
  EXPECT_EQ(trace.hint_kind, lgs::HintKind::question);
  // with train mode the answer is fused in
  opt.sampler_mode = topk::Mode::train;
  opt.num_samples = 20;
  ForwardTrace<float> t2;
  Tape<float> tape2(model.store);
  forward_answer(tape2, model, s, opt, RngStream(1, {}), &t2);
  EXPECT_EQ(t2.hint_kind, lgs::HintKind::question_answer);
}

TEST(Forward, QuestionOnlyMaskSkipsSampler) {
  auto model = build_model<float>({}, 3);
  auto s = synth::gen_descriptive_composite(bank(), {}, {1, 0, 0});
  ForwardOptions opt;
  opt.mask = Mask::QA;
  ForwardTrace<float> trace;
  Tape<float> tape(model.store);
  auto logits = forward_answer(tape, model, s, opt, RngStream(1, {}), &trace);
  EXPECT_FALSE(trace.sampled);
  EXPECT_EQ(logits.cols(), 4);
}

// -------------------------------------------------------------------- gift1

TEST(GiftOne, SeparableEmotionsReachHighAccuracy) {
  auto model = build_model<float>({}, 3);
  auto train = synth::gen_emotion_dataset(bank(), 0.05, 2000, 4);
  auto test = synth::gen_emotion_dataset(bank(), 0.05, 500, 5);
  auto cfg = default_stage_config(Stage::gift1);
  cfg.epochs = 3;
  TrainState st;
  train_stage_gift1(model, train, cfg, 5, st);
  EXPECT_GE(eval_emotion(model, test).accuracy, 0.95);
}

TEST(GiftOne, PermutedLabelsStayNearChance) {
  auto model = build_model<float>({}, 3);
  auto train = synth::gen_emotion_dataset(bank(), 0.05, 2000, 4);
  auto test = synth::gen_emotion_dataset(bank(), 0.05, 500, 5);
  // labels drawn independently of the feature
  RngStream rng(77, {});
  for (auto& e : train) e.label = static_cast<int>(rng.below(4));
  for (auto& e : test) e.label = static_cast<int>(rng.below(4));
  TrainState st;
  train_stage_gift1(model, train, default_stage_config(Stage::gift1), 5, st);
  EXPECT_NEAR(eval_emotion(model, test).accuracy, 0.25, 0.07);
}

TEST(GiftOne, LabelOutOfRangeIsInputError) {
  auto model = build_model<float>({}, 3);
  auto data = synth::gen_emotion_dataset(bank(), 0.05, 4, 4);
  data[2].label = 9;
  TrainState st;
  EXPECT_THROW(train_stage_gift1(model, data, default_stage_config(Stage::gift1), 5, st), InputError);
}

// --------------------------------------------------------------- checkpoints

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto model = build_model<float>({}, 3);
  auto data = synth::gen_emotion_dataset(bank(), 0.05, 32, 4);
  TrainState st;
  train_stage_gift1(model, data, default_stage_config(Stage::gift1), 5, st);
  CheckpointMeta meta{"gift1", st.step, 5, hash_hex(0x1234abcdULL)};
  auto a = temp_file("a.ckpt"), b = temp_file("b.ckpt");
  save_checkpoint(a.string(), make_checkpoint(model, meta));
  auto loaded = load_checkpoint(a.string());
  EXPECT_EQ(loaded.meta.step, st.step);
  EXPECT_EQ(loaded.meta.config_hash, "000000001234abcd");
  auto fresh = build_model<float>({}, 99);
  apply_checkpoint(fresh, loaded);
  EXPECT_TRUE(same_values(model, fresh));
  save_checkpoint(b.string(), make_checkpoint(fresh, loaded.meta));
  EXPECT_EQ(read_bytes(a), read_bytes(b));
}

TEST(Checkpoint, CorruptedBytesAreFormatErrors) {
  auto model = build_model<float>({}, 3);
  auto bytes = encode_checkpoint(make_checkpoint(model, CheckpointMeta{"lgs", 0, 1, hash_hex(1)}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  // first tensor: u16 name length at byte 12, then name, dtype, rank, dims
  auto bad_len = bytes;
  const std::size_t dims_at = 14 + (bytes[12] | (bytes[13] << 8)) + 2;
  for (std::size_t b = 0; b < 4; ++b) bad_len[dims_at + b] = 0xff;
  EXPECT_THROW(decode_checkpoint(bad_len), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(Checkpoint, ShapeMismatchLeavesModelUntouched) {
  auto model = build_model<float>({}, 3);
  ModelDims small;
  small.d = 16;
  auto other = build_model<float>(small, 3);
  auto ckpt = make_checkpoint(other, CheckpointMeta{"lgs", 0, 1, hash_hex(1)});
  auto before = build_model<float>({}, 3);
  EXPECT_THROW(apply_checkpoint(model, ckpt), FormatError);
  EXPECT_TRUE(same_values(model, before));
}

// ------------------------------------------------------------ determinism

TEST(Resume, SplitRunMatchesStraightRun) {
  auto data = synth::gen_mixed(bank(), {}, 64, 6);
  auto cfg = default_stage_config(Stage::gift2);
  auto straight = build_model<float>({}, 3);
  TrainState s1;
  auto log_a = train_stage(straight, data, bank(), cfg, 11, s1);

  auto split = build_model<float>({}, 3);
  TrainState s2;
  auto half = cfg;
  half.max_steps = 3;
  auto log_b = train_stage(split, data, bank(), half, 11, s2);
  ASSERT_EQ(s2.step, 3);
  // round-trip through a checkpoint before continuing
  auto ck = decode_checkpoint(encode_checkpoint(make_checkpoint(split, CheckpointMeta{"gift2", s2.step, 11, hash_hex(1)})));
  auto resumed = build_model<float>({}, 42);
  apply_checkpoint(resumed, ck);
  TrainState s3{Stage::gift2, ck.meta.step};
  auto log_c = train_stage(resumed, data, bank(), cfg, 11, s3);
  log_b.insert(log_b.end(), log_c.begin(), log_c.end());

  ASSERT_EQ(log_a.size(), log_b.size());
  for (std::size_t i = 0; i < log_a.size(); ++i) EXPECT_EQ(log_a[i].loss, log_b[i].loss) << i;
  EXPECT_TRUE(same_values(straight, resumed));
}

TEST(GiftTwo, FixedSeedIsDeterministic) {
  auto data = synth::gen_mixed(bank(), {}, 48, 6);
  auto cfg = default_stage_config(Stage::gift2);
  auto a = build_model<float>({}, 3), b = build_model<float>({}, 3);
  TrainState sa, sb;
  train_stage(a, data, bank(), cfg, 11, sa);
  train_stage(b, data, bank(), cfg, 11, sb);
  EXPECT_TRUE(same_values(a, b));
  EXPECT_EQ(group_hash(a.store, "scorer"), group_hash(build_model<float>({}, 3).store, "scorer"));
}

TEST(Stage, NamesRoundTrip) {
  for (Stage s : {Stage::lgs, Stage::gift1, Stage::gift2, Stage::mcq}) EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_THROW(parse_stage("gift3"), ConfigError);
}
