#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "space/decoder.hpp"
#include "space/model.hpp"
#include "space/ops.hpp"
#include "test_util.hpp"

using space::AssayType;
using space::Tensor;

namespace {

std::vector<space::ProfileSchema> schemas_by_q() {
  return {
      space::make_schema({{"a", {{AssayType::TfChip, 3}}}, {"b", {{AssayType::TfChip, 2}}}}),
      space::make_schema({{"a", {{AssayType::Cage, 1}, {AssayType::DnaseAtac, 2}}}, {"b", {{AssayType::Cage, 2}}}}),
      space::make_schema({{"a",
                           {{AssayType::DnaseAtac, 2},
                            {AssayType::TfChip, 1},
                            {AssayType::HistoneChip, 2},
                            {AssayType::Cage, 1}}},
                          {"b", {{AssayType::HistoneChip, 1}, {AssayType::DnaseAtac, 1}}}}),
  };
}

}  // namespace

TEST(Decoder, CategorizeRecomposeRoundTrip) {
  space::SpeciesTracks sp{"m",
                          {{"c0", AssayType::Cage},
                           {"d0", AssayType::DnaseAtac},
                           {"h0", AssayType::HistoneChip},
                           {"d1", AssayType::DnaseAtac}}};
  space::ProfileSchema schema({sp});
  auto o = testutil::random_tensor({2, 4, 5}, 1);
  auto blocks = space::categorize(o, schema, 0);
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].shape(), (space::Shape{2, 2, 5}));  // DNASE_ATAC
  EXPECT_EQ(blocks[0].data()[5], o.data()[3 * 5]);        // second DNASE row is track 3
  EXPECT_EQ(blocks[2].data()[0], o.data()[0]);            // CAGE is track 0
  auto back = space::recompose(blocks, schema, 0);
  for (std::size_t i = 0; i < o.numel(); ++i) EXPECT_EQ(back.data()[i], o.data()[i]);
}

TEST(Decoder, ResidualIdentityAtInitialization) {
  auto cfg = testutil::tiny_model();
  std::size_t q_seen = 0;
  for (const auto& schema : schemas_by_q()) {
    q_seen = std::max(q_seen, schema.num_profile_types());
    space::SpaceModel<double> model(cfg, schema, 11);
    auto rng = space::make_rng(3, "test/residual");
    for (std::size_t m = 0; m < schema.num_species(); ++m) {
      std::uniform_int_distribution<int> base(0, 3);
      std::vector<double> x(2 * 4 * cfg.seq_len, 0.0);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < cfg.seq_len; ++i) x[(b * 4 + base(rng)) * cfg.seq_len + i] = 1.0;
      auto out = model.forward(Tensor<double>::from_data({2, 4, cfg.seq_len}, x), m, true, &rng);
      ASSERT_EQ(out.o_final.shape(), out.o_base.shape());
      for (std::size_t i = 0; i < out.o_final.numel(); ++i) {
        EXPECT_LE(std::abs(out.o_final.data()[i] - out.o_base.data()[i]), 1e-12);
      }
    }
  }
  EXPECT_EQ(q_seen, 4u);
}

TEST(Decoder, GatesAreDistributions) {
  auto cfg = testutil::tiny_model();
  auto schema = testutil::two_species_schema();
  space::ParameterSet<double> params;
  space::Decoder<double> dec(cfg, schema, params, 0);
  auto y = testutil::random_tensor({3, cfg.num_bins(), cfg.d_hidden}, 2);
  auto e = testutil::random_tensor({1, cfg.d_hidden}, 3);
  auto g = dec.group_gate(e, space::ops::mean_pool(y, 1), 0);
  ASSERT_EQ(g.shape(), (space::Shape{3, cfg.groups}));
  for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(g.data()[b * 2] + g.data()[b * 2 + 1], 1.0, 1e-12);
  auto block = testutil::random_tensor({3, 2, cfg.num_bins()}, 4);
  auto w = dec.expert_gate(block, 0, 1, {cfg.decoder_top_k, 0.0, nullptr});
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t nz = 0;
    for (std::size_t k = 0; k < cfg.decoder_experts; ++k) nz += w.data()[b * cfg.decoder_experts + k] != 0;
    EXPECT_EQ(nz, cfg.decoder_top_k);
  }
  auto out = dec.forward(y, e, 0, false, nullptr);
  for (const auto& c : out.combined_gates) {
    if (!c.defined()) continue;
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < cfg.decoder_experts; ++k) s += c.data()[b * cfg.decoder_experts + k];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Decoder, EnhanceSkipsUnselectedExperts) {
  auto cfg = testutil::tiny_model();
  auto schema = testutil::two_species_schema();
  space::ParameterSet<double> params;
  space::Decoder<double> dec(cfg, schema, params, 0);
  // Poison expert 3: evaluating it would spread NaN into the output.
  for (auto& v : dec.experts()[3].w1.data()) v = std::numeric_limits<double>::quiet_NaN();
  for (auto& v : dec.experts()[1].w2.data()) v = 0.5;
  const std::size_t K = cfg.decoder_experts;
  auto block = testutil::random_tensor({2, 3, cfg.num_bins()}, 5);
  auto groups = Tensor<double>::from_data({2, 2}, {0.25, 0.75, 0.5, 0.5});
  std::vector<double> r0(2 * K, 0.0), r1(2 * K, 0.0);
  r0[0] = r0[K + 0] = 1.0;
  r1[1] = r1[K + 1] = 1.0;
  Tensor<double> combined;
  auto out = dec.enhance(block, groups,
                         {Tensor<double>::from_data({2, K}, r0), Tensor<double>::from_data({2, K}, r1)}, &combined);
  for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_DOUBLE_EQ(combined.data()[0], 0.25);
  EXPECT_DOUBLE_EQ(combined.data()[1], 0.75);
  // Expert 0 is still zero-initialized, so only expert 1 contributes.
  auto e1 = space::decoder_expert_forward(block, dec.experts()[1]);
  EXPECT_NEAR(out.data()[0], 0.75 * e1.data()[0], 1e-12);
}

TEST(Decoder, ProfileRoutingCsv) {
  auto schema = testutil::two_species_schema();
  space::ProfileRoutingTally tally(schema.num_profile_types(), 3);
  std::vector<Tensor<double>> gates(schema.num_profile_types());
  gates[0] = Tensor<double>::from_data({2, 3}, {0.5, 0.5, 0, 0, 0.5, 0.5});
  gates[3] = Tensor<double>::from_data({1, 3}, {0, 0, 1});
  tally.add(gates);
  testutil::TempDir tmp("profile");
  space::export_profile_routing(tally, schema, tmp.path / "p.csv");
  std::ifstream in(tmp.path / "p.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "profile_type,expert_0,expert_1,expert_2");
  std::getline(in, line);
  EXPECT_EQ(line, "DNASE_ATAC,0.25,0.5,0.25");
  std::vector<std::string> types;
  types.push_back("DNASE_ATAC");
  while (std::getline(in, line)) types.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(types, (std::vector<std::string>{"DNASE_ATAC", "TF_CHIP", "HISTONE_CHIP", "CAGE"}));
}
