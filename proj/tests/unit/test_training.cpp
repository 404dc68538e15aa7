// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "stgd/grad_check.hpp"
#include "stgd/training.hpp"

namespace stgd::train {
namespace {

model::DenoiserConfig quick_model() {
  model::DenoiserConfig cfg = model::tiny_config();
  cfg.d_in = data::kDefaultChannels;
  cfg.cond_dim = data::kConditionChannels;
  return cfg;
}

data::SyntheticDataset quick_data() { return data::make_dataset(2, 12, 2, 3); }

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = 4;
  cfg.diffusion_steps = 10;
  return cfg;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterStore ps;
  ps.add("w", "linear", Tensor::vector({1.0, -2.0}));
  AdamState opt = AdamState::for_params(ps, 0.1);
  adam_step(ps, opt);
  EXPECT_EQ(ps.value("w"), Tensor::vector({1.0, -2.0}));
}

TEST(Adam, FirstStepHandValue) {
  ParameterStore ps;
  ps.add("w", "linear", Tensor::scalar(1.0));
  ps.grad("w")[0] = 1.0;
  AdamState opt = AdamState::for_params(ps, 0.1);
  adam_step(ps, opt);
  EXPECT_NEAR(ps.value("w")[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(ps.grad("w")[0], 0.0);
  EXPECT_EQ(opt.step, 1);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParameterStore ps;
  ps.add("a", "linear", Tensor::scalar(1.0));
  ps.add("b", "linear", Tensor::scalar(1.0));
  ps.grad("b")[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState opt = AdamState::for_params(ps);
  try {
    adam_step(ps, opt);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(ps.value("a")[0], 1.0);
}

TEST(LearningRate, StepDecayHalvesEachQuarter) {
  TrainConfig cfg;
  cfg.epochs = 100;
  EXPECT_EQ(learning_rate(cfg, 0), kPublishedLearningRate);
  EXPECT_EQ(learning_rate(cfg, 25), kPublishedLearningRate / 2);
  EXPECT_EQ(learning_rate(cfg, 99), kPublishedLearningRate / 8);
  cfg.schedule = LrSchedule::kConstant;
  EXPECT_EQ(learning_rate(cfg, 99), kPublishedLearningRate);
}

TEST(LearningRate, PublishedValue) { EXPECT_EQ(kPublishedLearningRate, 0.0002); }

TEST(GradCheck, QuadraticProbeIsExact) {
  EXPECT_NEAR(gradcheck::central_difference([](double w) { return w * w; }, 3.0, 1e-4), 6.0, 1e-10);
}

TEST(GradCheck, GcnAndLambdaWithinTolerance) {
  EXPECT_LE(gradcheck::run("gcn_layer").max_rel_error, 1e-5);
  const gradcheck::BlockReport diff = gradcheck::run("diff_attention");
  EXPECT_LE(diff.max_rel_error, 1e-5);
  bool has_lambda = false;
  for (const auto& p : diff.params) has_lambda |= p.name.find("lambda") != std::string::npos;
  EXPECT_TRUE(has_lambda);
}

TEST(GradCheck, CoverageGate) {
  EXPECT_TRUE(gradcheck::uncovered_blocks().empty());
  EXPECT_THROW(gradcheck::run("not_a_block"), ConfigError);
}

TEST(GradCheck, PerturbedBlockFails) {
  gradcheck::Options opts;
  opts.perturb_block = "film";
  EXPECT_FALSE(gradcheck::run("film", opts).passed);
}

TEST(Train, OneEpochOneSampleRoundTrips) {
  const data::SyntheticDataset ds = data::make_dataset(2, 10, 1, 1);
  const TrainConfig cfg = quick_train(1);
  const TrainResult r = train_toy(ds, cfg, quick_model());
  ASSERT_EQ(r.curve.size(), 1u);
  const TrainResult back = from_checkpoint(model::decode_checkpoint(model::encode_checkpoint(to_checkpoint(r, cfg))));
  EXPECT_EQ(back.state.params, r.state.params);
  EXPECT_EQ(back.optimizer.step, r.optimizer.step);
  EXPECT_EQ(back.norm_mean, r.norm_mean);
  EXPECT_EQ(back.curve.size(), 1u);
  EXPECT_EQ(back.curve[0].total, r.curve[0].total);
}

TEST(Train, BitReproducible) {
  const TrainResult a = train_toy(quick_data(), quick_train(3), quick_model());
  const TrainResult b = train_toy(quick_data(), quick_train(3), quick_model());
  EXPECT_EQ(a.state.params, b.state.params);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.curve[e].total, b.curve[e].total);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const TrainResult full = train_toy(quick_data(), quick_train(6), quick_model());
  const TrainConfig first_cfg = quick_train(3);
  const TrainResult first = train_toy(quick_data(), first_cfg, quick_model());
  const TrainResult reloaded = from_checkpoint(model::decode_checkpoint(model::encode_checkpoint(to_checkpoint(first, first_cfg))));
  const TrainResult resumed = train_toy(quick_data(), quick_train(6), quick_model(), &reloaded);
  EXPECT_EQ(resumed.optimizer.step, 6);
  EXPECT_EQ(resumed.state.params, full.state.params);
  ASSERT_EQ(resumed.curve.size(), 6u);
  EXPECT_EQ(resumed.curve[5].total, full.curve[5].total);
}

TEST(Train, LearningRateChangesTrajectory) {
  TrainConfig fast = quick_train(2);
  fast.lr = 4e-4;
  EXPECT_NE(train_toy(quick_data(), quick_train(2), quick_model()).state.params,
            train_toy(quick_data(), fast, quick_model()).state.params);
}

TEST(Train, DivergenceReportsStep) {
  TrainConfig cfg = quick_train(3);
  cfg.lr = 1e300;
  try {
    train_toy(quick_data(), cfg, quick_model());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1);
  }
}

TEST(Train, ChannelMismatchRejected) {
  EXPECT_THROW(train_toy(quick_data(), quick_train(1), model::tiny_config()), ConfigError);
}

TEST(Curve, SmoothedLossAndCsv) {
  std::vector<diffusion::LossParts> curve(4);
  for (std::size_t i = 0; i < 4; ++i) curve[i].total = static_cast<double>(i + 1);
  EXPECT_DOUBLE_EQ(smoothed_loss(curve, 3, 2), 3.5);
  EXPECT_DOUBLE_EQ(smoothed_loss(curve, 3, 4), 2.5);
  EXPECT_THROW(smoothed_loss(curve, 0, 10), PreconditionError);
  const std::string csv = loss_curve_csv(curve);
  EXPECT_EQ(csv.rfind("epoch,total,simple,pos,vel,contact\n", 0), 0u);
}

}  // namespace
}  // namespace stgd::train
