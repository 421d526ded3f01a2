#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "space/trainer.hpp"
#include "test_util.hpp"

namespace {

space::SynthConfig tiny_synth() {
  space::SynthConfig s;
  s.seq_len = 256;
  s.bin_size = 32;
  s.records_per_species = 8;
  s.motif_length = 6;
  s.insertions_per_record = 2;
  s.seed = 3;
  return s;
}

space::TrainConfig tiny_train() {
  space::TrainConfig t;
  t.steps = 6;
  t.warmup_steps = 2;
  t.peak_lr = 1e-3;
  t.batch_size = 2;
  t.eval_every = 3;
  return t;
}

struct Fixture {
  space::ProfileSchema schema = testutil::two_species_schema();
  space::Dataset data = space::synthesize_dataset(schema, tiny_synth());
};

std::vector<nlohmann::json> run_steps(const Fixture& f, const space::TrainConfig& cfg, std::size_t n) {
  space::SpaceModel<float> model(testutil::tiny_model(), f.schema, cfg.seed);
  space::Trainer<float> trainer(model, f.data, cfg);
  std::vector<nlohmann::json> log;
  for (std::size_t i = 0; i < n; ++i) log.push_back(trainer.step());
  return log;
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  space::TrainConfig c;
  c.steps = 2000;
  c.warmup_steps = 200;
  c.peak_lr = 5e-4;
  EXPECT_EQ(space::lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(space::lr_at(100, c), 2.5e-4);
  EXPECT_DOUBLE_EQ(space::lr_at(200, c), 5e-4);
  EXPECT_NEAR(space::lr_at(1100, c), 2.5e-4, 1e-15);
  EXPECT_NEAR(space::lr_at(2000, c), 0.0, 1e-18);
  // Continuous across the warmup boundary and monotone on each side.
  EXPECT_NEAR(space::lr_at(199, c), space::lr_at(201, c), 2 * 5e-4 / 200);
  for (std::size_t s = 1; s <= 200; ++s) EXPECT_GT(space::lr_at(s, c), space::lr_at(s - 1, c));
  for (std::size_t s = 201; s <= 2000; ++s) EXPECT_LT(space::lr_at(s, c), space::lr_at(s - 1, c));
  const double progress = 0.3;
  EXPECT_NEAR(space::lr_at(200 + 540, c), 5e-4 * 0.5 * (1 + std::cos(std::numbers::pi * progress)), 1e-15);
}

TEST(Clip, RescalesOnlyAboveThreshold) {
  space::ParameterSet<double> ps;
  auto a = ps.add("a", {2});
  auto b = ps.add("b", {1});
  a.ensure_grad();
  b.ensure_grad();
  a.grad()[0] = 3.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(space::global_grad_norm(ps), 5.0);

  auto r = space::clip_global_norm(ps, 1.0);
  EXPECT_DOUBLE_EQ(r.norm_before, 5.0);
  EXPECT_DOUBLE_EQ(r.scale, 0.2);
  EXPECT_NEAR(r.norm_after, 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);

  auto r2 = space::clip_global_norm(ps, 2.0);
  EXPECT_EQ(r2.scale, 1.0);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(AdamW, MatchesVectorizedReference) {
  const std::size_t n = 257;
  auto p0 = testutil::random_tensor({n}, 10);
  std::vector<double> p(p0.data().begin(), p0.data().end()), m(n, 0.0), v(n, 0.0);
  Eigen::ArrayXd P = Eigen::Map<Eigen::ArrayXd>(p.data(), n), M = Eigen::ArrayXd::Zero(n), V = M;
  space::AdamHyper h{1e-3, 0.9, 0.999, 1e-8, 0.01};
  for (std::uint64_t t = 1; t <= 50; ++t) {
    auto g0 = testutil::random_tensor({n}, 100 + t);
    std::vector<double> g(g0.data().begin(), g0.data().end());
    space::adamw_update<double>(p, g, m, v, t, h);

    Eigen::ArrayXd G = Eigen::Map<Eigen::ArrayXd>(g.data(), n);
    P *= 1.0 - h.lr * h.weight_decay;
    M = h.beta1 * M + (1 - h.beta1) * G;
    V = h.beta2 * V + (1 - h.beta2) * G.square();
    const Eigen::ArrayXd mhat = M / (1 - std::pow(h.beta1, double(t)));
    const Eigen::ArrayXd vhat = V / (1 - std::pow(h.beta2, double(t)));
    P -= h.lr * mhat / (vhat.sqrt() + h.eps);
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], P[i], 1e-12);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  space::ParameterSet<double> ps;
  auto w = ps.add("w", {3});
  w.data()[0] = 1.0;
  w.ensure_grad();
  w.grad()[0] = 5.0;
  w.grad()[1] = -0.01;
  w.grad()[2] = 0.0;
  space::AdamW<double> opt(ps);
  opt.step({0.1, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(w.data()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.data()[1], 0.1, 1e-5);
  EXPECT_EQ(w.data()[2], 0.0);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(TrainConfig, ValidationNamesField) {
  auto c = tiny_train();
  c.batch_size = 0;
  try {
    c.validate(2);
    FAIL();
  } catch (const space::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch_size"), std::string::npos);
  }
  c = tiny_train();
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(2), space::ConfigError);
  c = tiny_train();
  EXPECT_EQ(space::TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Trainer, LogRecordsAreDeterministic) {
  Fixture f;
  auto cfg = tiny_train();
  auto a = run_steps(f, cfg, 6);
  auto b = run_steps(f, cfg, 6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].dump(), b[i].dump());
  EXPECT_EQ(a[0]["lr"], 0.0);
  EXPECT_EQ(a[0]["mi"].size(), 2u);
  EXPECT_FALSE(a[1].contains("param_hash"));
  EXPECT_TRUE(a[2].contains("param_hash"));
  EXPECT_TRUE(a[5].contains("param_hash"));
  for (const auto& r : a) {
    EXPECT_LE(r["grad_norm"].get<double>(), cfg.clip_norm * (1 + 1e-6));
    double mi = 0;
    for (double v : r["mi"]) mi += v;
    EXPECT_NEAR(r["total"].get<double>(), r["poisson"].get<double>() - cfg.alpha * mi, 1e-9);
  }
  cfg.seed = 1;
  auto c = run_steps(f, cfg, 3);
  EXPECT_NE(a[2]["param_hash"], c[2]["param_hash"]);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  Fixture f;
  auto cfg = tiny_train();
  auto full = run_steps(f, cfg, 6);

  space::SpaceModel<float> model(testutil::tiny_model(), f.schema, cfg.seed);
  space::Trainer<float> first(model, f.data, cfg);
  for (int i = 0; i < 3; ++i) first.step();

  // Fresh model with copied state, as a checkpoint restore would do.
  space::SpaceModel<float> model2(testutil::tiny_model(), f.schema, 99);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto src = model.params().entries()[i].second;
    auto dst = model2.params().entries()[i].second;
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
  space::Trainer<float> second(model2, f.data, cfg);
  second.optimizer().first_moments() = first.optimizer().first_moments();
  second.optimizer().second_moments() = first.optimizer().second_moments();
  second.resume(first.current_step(), first.batches_consumed(), first.rng_state());
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(second.step().dump(), full[i].dump()) << i;
}

TEST(Trainer, NonFiniteLossLeavesParametersUntouched) {
  Fixture f;
  space::SpaceModel<float> model(testutil::tiny_model(), f.schema, 0);
  space::Trainer<float> trainer(model, f.data, tiny_train());
  auto w = model.params().find("decoder.head.human.weight");
  w.data()[0] = std::nanf("");
  auto before = model.params().hash();
  EXPECT_THROW(trainer.step(), space::NumericError);
  EXPECT_EQ(model.params().hash(), before);
}

TEST(Trainer, EvaluateAndPredictShapes) {
  Fixture f;
  space::SpaceModel<float> model(testutil::tiny_model(), f.schema, 0);
  const double loss = space::evaluate_poisson(model, f.data, 3);
  EXPECT_TRUE(std::isfinite(loss));
  auto pred = space::predict_species(model, f.data, 1, 3);
  EXPECT_EQ(pred.size(), 8u * 4u * 8u);
  for (double p : pred) EXPECT_GT(p, 0.0);
  // Same answer regardless of the evaluation batch size.
  EXPECT_NEAR(space::evaluate_poisson(model, f.data, 8), loss, 1e-5);
}

TEST(Trainer, RejectsMismatchedSchema) {
  Fixture f;
  auto other = space::make_schema({{"human", {{space::AssayType::Cage, 1}}}, {"mouse", {{space::AssayType::Cage, 1}}}});
  space::SpaceModel<float> model(testutil::tiny_model(), other, 0);
  EXPECT_THROW(space::Trainer<float>(model, f.data, tiny_train()), space::ConfigError);
}
