#include <gtest/gtest.h>

#include <fstream>

#include "space/run.hpp"
#include "test_util.hpp"

namespace {

space::Checkpoint sample_checkpoint() {
  space::Checkpoint c;
  c.config = {{"train", {{"steps", 3}}}};
  c.step = 7;
  c.batches_consumed = 14;
  c.rng_state = "1 2 3";
  c.params.push_back({"a", space::DType::f32, {2, 3}, {1, 2, 3, 4, 5, 6.5}});
  c.params.push_back({"b", space::DType::f64, {1}, {0.1}});
  c.adam_m.push_back({"a", space::DType::f32, {2, 3}, {0, 0, 0, 0, 0, 1}});
  c.adam_v.push_back({"a", space::DType::f32, {2, 3}, {0, 0, 0, 0, 0, 2}});
  return c;
}

space::RunConfig tiny_run() {
  std::ifstream in(std::string(SPACE_CONFIG_DIR) + "/tiny.ini");
  return space::parse_run_config(in);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Checkpoint, SerializationRoundTripsExactly) {
  auto c = sample_checkpoint();
  auto bytes = space::serialize_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SPCE");
  auto back = space::deserialize_checkpoint(bytes);
  EXPECT_EQ(back.step, 7u);
  EXPECT_EQ(back.batches_consumed, 14u);
  EXPECT_EQ(back.rng_state, "1 2 3");
  EXPECT_EQ(back.config, c.config);
  ASSERT_EQ(back.params.size(), 2u);
  EXPECT_EQ(back.params[1].values[0], 0.1);
  EXPECT_EQ(back.params[1].dtype, space::DType::f64);
  EXPECT_EQ(back.params[0].shape, (space::Shape{2, 3}));
  EXPECT_EQ(space::serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, DistinctErrors) {
  auto bytes = space::serialize_checkpoint(sample_checkpoint());

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(space::deserialize_checkpoint(bad), space::BadMagicError);

  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(space::deserialize_checkpoint(bad), space::VersionMismatchError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
    EXPECT_THROW(space::deserialize_checkpoint(part), space::TruncatedError) << cut;
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(space::deserialize_checkpoint(bad), space::CheckpointError);
}

TEST(Checkpoint, FileSaveLoadAndMissingFile) {
  testutil::TempDir tmp("ckpt");
  auto c = sample_checkpoint();
  space::save_checkpoint(c, tmp.path / "a.ckpt");
  EXPECT_FALSE(std::filesystem::exists(tmp.path / "a.ckpt.tmp"));
  auto back = space::load_checkpoint(tmp.path / "a.ckpt");
  EXPECT_EQ(space::serialize_checkpoint(back), space::serialize_checkpoint(c));
  EXPECT_THROW(space::load_checkpoint(tmp.path / "missing.ckpt"), space::IoError);
  EXPECT_THROW(space::save_checkpoint(c, tmp.path / "no" / "dir" / "a.ckpt"), space::IoError);
}

TEST(Checkpoint, ModelRoundTripIsBitwise) {
  testutil::TempDir tmp("ckpt_model");
  auto cfg = tiny_run();
  auto data = space::synthesize_dataset(cfg.schema, cfg.synth);
  space::Model model(cfg.model, cfg.schema, cfg.train.seed);
  space::Trainer<float> trainer(model, data, cfg.train);
  for (int i = 0; i < 3; ++i) trainer.step();

  space::save_checkpoint(space::capture_checkpoint(cfg, model, &trainer), tmp.path / "m.ckpt");
  auto loaded = space::load_checkpoint(tmp.path / "m.ckpt");
  space::save_checkpoint(loaded, tmp.path / "m2.ckpt");
  EXPECT_EQ(read_bytes(tmp.path / "m.ckpt"), read_bytes(tmp.path / "m2.ckpt"));

  auto restored = space::model_from_checkpoint(loaded);
  EXPECT_EQ(restored->params().hash(), model.params().hash());
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(space::predict_species(*restored, data, m, 4), space::predict_species(model, data, m, 4));
  }
  EXPECT_EQ(space::run_config_of(loaded).to_json(), cfg.to_json());
}

TEST(Checkpoint, ResumedTrainerContinuesIdentically) {
  auto cfg = tiny_run();
  auto data = space::synthesize_dataset(cfg.schema, cfg.synth);
  space::Model a(cfg.model, cfg.schema, cfg.train.seed);
  space::Trainer<float> ta(a, data, cfg.train);
  for (int i = 0; i < 3; ++i) ta.step();
  auto ckpt = space::deserialize_checkpoint(space::serialize_checkpoint(space::capture_checkpoint(cfg, a, &ta)));
  std::vector<std::string> expected;
  for (int i = 0; i < 3; ++i) expected.push_back(ta.step().dump());

  auto b = space::model_from_checkpoint(ckpt);
  space::Trainer<float> tb(*b, data, cfg.train);
  space::restore_optimizer(ckpt, tb);
  EXPECT_EQ(tb.current_step(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(tb.step().dump(), expected[i]);
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  auto cfg = tiny_run();
  space::Model model(cfg.model, cfg.schema, 0);
  auto ckpt = space::capture_checkpoint(cfg, model, nullptr);
  ckpt.params[0].shape.back() += 1;
  ckpt.params[0].values.resize(space::shape_numel(ckpt.params[0].shape));
  EXPECT_THROW(space::restore_parameters(ckpt, model), space::ShapeMismatchError);
  auto ckpt2 = space::capture_checkpoint(cfg, model, nullptr);
  ckpt2.params.pop_back();
  EXPECT_THROW(space::restore_parameters(ckpt2, model), space::ShapeMismatchError);
}
