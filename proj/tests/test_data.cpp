#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "space/data.hpp"
#include "test_util.hpp"

using space::AssayType;

namespace {

space::SynthConfig small_synth() {
  space::SynthConfig c;
  c.records_per_species = 12;
  c.seq_len = 256;
  c.bin_size = 32;
  c.insertions_per_record = 4;
  c.seed = 5;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(OneHot, EncodesBasesAndN) {
  auto x = space::one_hot<float>("ACgtN");
  ASSERT_EQ(x.shape(), (space::Shape{4, 5}));
  const float expect[4][5] = {{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {0, 0, 1, 0, 0}, {0, 0, 0, 1, 0}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) EXPECT_EQ(x.data()[r * 5 + c], expect[r][c]);
}

TEST(OneHot, IllegalCharacterNamesPosition) {
  try {
    space::one_hot<float>("ACXG");
    FAIL();
  } catch (const space::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'X'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(MotifRules, SharedRulesReuseMotifAcrossSpecies) {
  auto schema = testutil::two_species_schema();
  auto cfg = small_synth();
  auto rules = space::make_motif_rules(schema, cfg);
  std::map<std::string, std::pair<double, int>> shared;
  for (const auto& sp : rules)
    for (const auto& r : sp)
      if (r.shared_across_species) {
        auto& e = shared[r.motif];
        if (e.second) EXPECT_EQ(e.first, r.amplitude);
        e = {r.amplitude, e.second + 1};
      }
  // DNASE_ATAC and CAGE exist in both species.
  int both = 0;
  for (const auto& [m, e] : shared) both += e.second == 2;
  EXPECT_EQ(both, 2);
}

TEST(MotifRules, SameTypeTracksShareHalfTheirRules) {
  auto schema = testutil::two_species_schema();
  auto rules = space::make_motif_rules(schema, small_synth());
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    std::map<std::string, std::vector<std::string>> by_track;
    for (const auto& r : rules[m])
      for (const auto& t : r.tracks) by_track[t].push_back(r.motif);
    for (const auto& a : schema.species(m).tracks)
      for (const auto& b : schema.species(m).tracks) {
        if (a.id == b.id || a.assay != b.assay) continue;
        std::set<std::string> sa(by_track[a.id].begin(), by_track[a.id].end());
        std::size_t common = 0;
        for (const auto& x : by_track[b.id]) common += sa.count(x);
        EXPECT_GE(2 * common, by_track[a.id].size());
      }
  }
}

TEST(ExpectedRates, TriangularBumpAroundMotifCenter) {
  auto schema = space::make_schema({{"s", {{AssayType::Cage, 2}}}});
  auto cfg = small_synth();
  cfg.base_rate = 0.25;
  cfg.kernel_width = 3;
  std::string seq(256, 'A');
  const std::string motif = "CGTACGTT";
  seq.replace(100, motif.size(), motif);
  space::MotifRule rule{motif, 8.0, 3, false, {"s_CAGE_1"}};
  auto rate = space::expected_rates(schema, 0, {rule}, seq, cfg);
  // center bin = (100 + 4) / 32 = 3; weights 1, 0.5 at distance 0, 1.
  for (std::size_t l = 0; l < 8; ++l) {
    EXPECT_DOUBLE_EQ(rate[l], 0.25);
    double expect = 0.25;
    if (l == 3) expect += 8.0;
    if (l == 2 || l == 4) expect += 4.0;
    EXPECT_DOUBLE_EQ(rate[8 + l], expect) << l;
  }
}

TEST(Synthesis, ZeroAmplitudeGivesBaseRateOnly) {
  auto schema = testutil::two_species_schema();
  auto cfg = small_synth();
  cfg.amplitude_min = cfg.amplitude_max = 0.0;
  auto rules = space::make_motif_rules(schema, cfg);
  auto data = space::synthesize_dataset(schema, cfg);
  for (std::size_t m = 0; m < 2; ++m)
    for (const auto& seq : data.species[m].sequences)
      for (double r : space::expected_rates(schema, m, rules[m], seq, cfg)) EXPECT_EQ(r, cfg.base_rate);
}

TEST(Synthesis, DeterministicAndSeedSensitive) {
  auto schema = testutil::two_species_schema();
  auto a = space::synthesize_dataset(schema, small_synth());
  auto b = space::synthesize_dataset(schema, small_synth());
  auto cfg = small_synth();
  cfg.seed = 6;
  auto c = space::synthesize_dataset(schema, cfg);
  EXPECT_EQ(a.species[0].sequences, b.species[0].sequences);
  EXPECT_EQ(a.species[1].targets, b.species[1].targets);
  EXPECT_NE(a.species[0].sequences, c.species[0].sequences);
}

TEST(Synthesis, ValidationErrors) {
  auto schema = testutil::two_species_schema();
  auto cfg = small_synth();
  cfg.seq_len = 250;
  EXPECT_THROW(space::synthesize_dataset(schema, cfg), space::DataError);
  cfg = small_synth();
  cfg.records_override = {3};
  EXPECT_THROW(space::synthesize_dataset(schema, cfg), space::DataError);
}

TEST(DatasetIo, WriteLoadRoundTripAndDigest) {
  auto schema = testutil::two_species_schema();
  testutil::TempDir tmp("data");
  auto a = space::generate_dataset(schema, small_synth(), tmp.path / "a");
  space::generate_dataset(schema, small_synth(), tmp.path / "b");
  for (const char* f : {"manifest.json", "human/sequences.txt", "human/targets.f32", "mouse/tracks.csv"}) {
    EXPECT_EQ(slurp(tmp.path / "a" / f), slurp(tmp.path / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(tmp.path / "a" / "mouse/tracks.csv").substr(0, 19), "track_id,assay_type");
  auto back = space::load_dataset(tmp.path / "a");
  EXPECT_TRUE(back.schema == schema);
  EXPECT_EQ(back.species[1].sequences, a.species[1].sequences);
  EXPECT_EQ(back.species[0].targets, a.species[0].targets);
}

TEST(DatasetIo, MissingOrTruncatedInputs) {
  testutil::TempDir tmp("data_bad");
  EXPECT_THROW(space::load_dataset(tmp.path / "nope"), space::IoError);
  auto schema = testutil::two_species_schema();
  space::generate_dataset(schema, small_synth(), tmp.path / "d");
  std::filesystem::resize_file(tmp.path / "d" / "human" / "targets.f32", 10);
  EXPECT_THROW(space::load_dataset(tmp.path / "d"), space::IoError);
}

TEST(Batches, AlternatingSpeciesAndEqualWindows) {
  auto schema = testutil::two_species_schema();
  auto cfg = small_synth();
  cfg.records_override = {12, 5};
  auto data = space::synthesize_dataset(schema, cfg);
  space::BatchStream s(data, 4, space::BatchMode::Alternating, 1);
  std::map<std::size_t, std::size_t> per_species;
  for (int i = 0; i < 20; ++i) {
    auto idx = s.next_index();
    EXPECT_EQ(idx.species, static_cast<std::size_t>(i % 2));
    EXPECT_FALSE(idx.records.empty());
    EXPECT_LE(idx.records.size(), 4u);
    ++per_species[idx.species];
  }
  EXPECT_EQ(per_species[0], per_species[1]);
}

TEST(Batches, BalancedPadsMinorityToMajority) {
  auto schema = testutil::two_species_schema();
  auto cfg = small_synth();
  cfg.records_override = {12, 5};
  auto data = space::synthesize_dataset(schema, cfg);
  space::BatchStream s(data, 4, space::BatchMode::Balanced, 1);
  EXPECT_EQ(s.batches_per_epoch(), 3u);
  std::vector<std::size_t> seen_minor;
  for (std::size_t i = 0; i < 2 * s.batches_per_epoch(); ++i) {
    auto idx = s.next_index();
    EXPECT_EQ(idx.records.size(), 4u);
    if (idx.species == 1) seen_minor.insert(seen_minor.end(), idx.records.begin(), idx.records.end());
  }
  EXPECT_EQ(seen_minor.size(), 12u);
  std::set<std::size_t> distinct(seen_minor.begin(), seen_minor.end());
  EXPECT_EQ(distinct.size(), 5u);  // every real record appears in the epoch
}

TEST(Batches, MakeBatchShapes) {
  auto schema = testutil::two_species_schema();
  auto data = space::synthesize_dataset(schema, small_synth());
  auto b = space::make_batch<float>(data, 1, {0, 3});
  EXPECT_EQ(b.x.shape(), (space::Shape{2, 4, 256}));
  EXPECT_EQ(b.targets.shape(), (space::Shape{2, 4, 8}));
  EXPECT_THROW(space::make_batch<float>(data, 1, {99}), space::DataError);
}
