#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "space/metrics.hpp"
#include "space/rng.hpp"
#include "test_util.hpp"

using space::ConfusionMatrix;

TEST(Mcc, BinaryExamples) {
  EXPECT_EQ(space::mcc_binary(1, 1, 0, 0), 1.0);
  EXPECT_EQ(space::mcc_binary(0, 0, 1, 1), -1.0);
  EXPECT_NEAR(space::mcc_binary(6, 3, 1, 2), 16.0 / std::sqrt(1120.0), 1e-15);
  EXPECT_EQ(space::mcc_binary(5, 0, 3, 0), 0.0);
}

TEST(Mcc, MulticlassEqualsBinaryOnTwoByTwo) {
  auto rng = space::make_rng(1, "test/mcc");
  std::uniform_int_distribution<int> u(0, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint64_t tp = u(rng), fn = u(rng), fp = u(rng), tn = u(rng);
    // Rows are the true class; class 0 is "positive".
    ConfusionMatrix c({{tp, fn}, {fp, tn}});
    const double multi = space::mcc_multiclass(c);
    EXPECT_NEAR(multi, space::mcc_binary(tp, tn, fp, fn), 1e-12);
    EXPECT_GE(multi, -1.0);
    EXPECT_LE(multi, 1.0);
    ConfusionMatrix scaled({{3 * tp, 3 * fn}, {3 * fp, 3 * tn}});
    EXPECT_NEAR(space::mcc_multiclass(scaled), multi, 1e-12);
  }
}

TEST(Mcc, MulticlassSpecialMatrices) {
  EXPECT_EQ(space::mcc_multiclass(ConfusionMatrix({{4, 0, 0}, {0, 7, 0}, {0, 0, 2}})), 1.0);
  EXPECT_EQ(space::mcc_multiclass(ConfusionMatrix({{0, 5}, {5, 0}})), -1.0);
  EXPECT_EQ(space::mcc_multiclass(ConfusionMatrix({{3, 3, 3}, {3, 3, 3}, {3, 3, 3}})), 0.0);
  EXPECT_EQ(space::mcc_multiclass(ConfusionMatrix({{0, 0}, {0, 9}})), 0.0);
  EXPECT_THROW(ConfusionMatrix(1), std::invalid_argument);
}

TEST(Mcc, MulticlassBounded) {
  auto rng = space::make_rng(2, "test/mcc_k");
  std::uniform_int_distribution<int> u(0, 20);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t K = 2 + trial % 4;
    ConfusionMatrix c(K);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) c(i, j) = u(rng);
    const double v = space::mcc_multiclass(c);
    EXPECT_GE(v, -1.0 - 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}

TEST(Pearson, Examples) {
  std::vector<double> a{1, 2, 3, 4}, b{2, 4, 5, 9};
  EXPECT_NEAR(*space::pearson(a, a), 1.0, 1e-15);
  std::vector<double> neg{-1, -2, -3, -4};
  EXPECT_NEAR(*space::pearson(neg, a), -1.0, 1e-15);
  // Centered: a' = (-1.5, -0.5, 0.5, 1.5), b' = (-3, -1, 0, 4); sum a'b' = 11.
  EXPECT_NEAR(*space::pearson(a, b), 11.0 / std::sqrt(5.0 * 26.0), 1e-12);
  std::vector<double> flat{2, 2, 2, 2};
  EXPECT_FALSE(space::pearson(flat, b).has_value());
}

TEST(Pearson, AffineInvariance) {
  auto x = testutil::random_tensor({40}, 3);
  auto y = testutil::random_tensor({40}, 4);
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  const double r = *space::pearson(a, b);
  for (auto& v : a) v = 3.5 * v - 2.0;
  for (auto& v : b) v = 0.1 * v + 7.0;
  EXPECT_NEAR(*space::pearson(a, b), r, 1e-9);
}

TEST(Pearson, PerTrackLayoutAndReport) {
  // n = 2 records, 2 tracks, 3 bins; track 1 is constant in the prediction.
  std::vector<double> pred{1, 2, 3, 5, 5, 5, 4, 5, 6, 5, 5, 5};
  std::vector<double> target{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6};
  auto r = space::pearson_per_track(pred, target, 2, 2, 3);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NEAR(*r[0], 1.0, 1e-12);
  EXPECT_FALSE(r[1].has_value());

  space::MetricsReport rep;
  rep.per_track = {{"h", "t0", space::AssayType::Cage, r[0]},
                   {"h", "t1", space::AssayType::Cage, r[1]},
                   {"h", "t2", space::AssayType::TfChip, 0.5}};
  rep.finalize();
  EXPECT_NEAR(*rep.overall, 0.75, 1e-12);
  EXPECT_NEAR(*rep.per_assay_type.at("CAGE"), 1.0, 1e-12);
  testutil::TempDir tmp("metrics");
  rep.write(tmp.path / "m.json");
  std::ifstream in(tmp.path / "m.json");
  auto j = nlohmann::json::parse(in);
  EXPECT_TRUE(j["per_track"][1]["pearson"].is_null());
  EXPECT_EQ(j["per_track"][2]["assay_type"], "TF_CHIP");
  EXPECT_FALSE(j.contains("mcc"));
}
