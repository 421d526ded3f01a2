#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "space/config.hpp"
#include "test_util.hpp"

namespace {

const char* kBase = R"(
[model]
seq_len = 256
bin_size = 32
d_hidden = 16
stem_channels = 8
heads = 2
[data]
species = human mouse
layout.human = DNASE_ATAC:2 CAGE:1
layout.mouse = CAGE:2
records_per_species = 4
[train]
steps = 10
warmup_steps = 2
batch_mode = balanced
)";

space::RunConfig parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return space::parse_run_config(in, base);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const space::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesSections) {
  auto c = parse(kBase);
  EXPECT_EQ(c.model.seq_len, 256u);
  EXPECT_EQ(c.model.d_hidden, 16u);
  EXPECT_EQ(c.synth.seq_len, 256u);
  EXPECT_EQ(c.synth.bin_size, 32u);
  EXPECT_EQ(c.synth.records_per_species, 4u);
  EXPECT_EQ(c.train.steps, 10u);
  EXPECT_EQ(c.train.batch_mode, space::BatchMode::Balanced);
  ASSERT_EQ(c.schema.num_species(), 2u);
  EXPECT_EQ(c.schema.species(1).name, "mouse");
  EXPECT_EQ(c.schema.species(0).tracks.size(), 3u);
  EXPECT_EQ(space::RunConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(error_of(std::string(kBase) + "[train]\nlearning_rate = 1\n").find("train.learning_rate"),
            std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[model]\nheads = 3\n").find("model.heads"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[train]\nclip_norm = 0\n").find("clip_norm"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[train]\npeak_lr = fast\n").find("train.peak_lr"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[nonsense]\nx = 1\n").find("nonsense.x"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[data]\nlayout.rat = CAGE:1\n").find("rat"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[train]\nbatch_mode = random\n").find("train.batch_mode"),
            std::string::npos);
  EXPECT_FALSE(error_of(std::string(kBase) + "[data]\nlayout.human = BOGUS:1\n").empty());
  EXPECT_FALSE(error_of(std::string(kBase) + "[model]\nbin_size = 100\n").empty());
}

TEST(Config, SchemaFileIsRelativeToConfig) {
  testutil::TempDir tmp("config");
  {
    std::ofstream f(tmp.path / "schema.json");
    f << testutil::two_species_schema().to_json().dump();
  }
  {
    std::ofstream f(tmp.path / "run.ini");
    f << "[model]\nseq_len = 256\nbin_size = 32\nd_hidden = 16\nheads = 2\n[data]\nschema = schema.json\n";
  }
  auto c = space::load_run_config(tmp.path / "run.ini");
  EXPECT_TRUE(c.schema == testutil::two_species_schema());
  EXPECT_THROW(space::load_run_config(tmp.path / "missing.ini"), space::IoError);
  EXPECT_THROW(parse("[model]\nseq_len = 256\nbin_size = 32\n[data]\nschema = schema.json\nspecies = human\n",
                     tmp.path),
               space::ConfigError);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"tiny.ini", "desk.ini"}) {
    auto c = space::load_run_config(std::filesystem::path(SPACE_CONFIG_DIR) / name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
  auto desk = space::load_run_config(std::filesystem::path(SPACE_CONFIG_DIR) / "desk.ini");
  EXPECT_EQ(desk.model.seq_len, 2048u);
  EXPECT_EQ(desk.model.d_hidden, 64u);
  EXPECT_EQ(desk.train.steps, 2000u);
  EXPECT_EQ(desk.train.alpha, 0.01);
}
