// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "stgd/denoiser.hpp"
#include "stgd/rng.hpp"

namespace stgd::model {
namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg = tiny_config();
  cfg.d_in = 6;
  cfg.cond_dim = 5;
  return cfg;
}

TEST(Config, RejectsOddDecoderDepth) {
  DenoiserConfig cfg = small_config();
  cfg.decoder_layers = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, RejectsBadPositionChannels) {
  DenoiserConfig cfg = small_config();
  cfg.position_channels = {1, 6};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, KeyValueRoundTrip) {
  DenoiserConfig cfg = small_config();
  cfg.epsilon = 0.37;
  EXPECT_EQ(DenoiserConfig::from_key_values(cfg.to_key_values()), cfg);
}

TEST(Config, UnknownKeyRejected) {
  io::KeyValues kv = small_config().to_key_values();
  kv.set("dmodel", "3");
  EXPECT_THROW(DenoiserConfig::from_key_values(kv), ConfigError);
}

TEST(Layers, AlternateDiffThenLdt) {
  EXPECT_EQ(layer_kind(0), LayerKind::kDiffAttn);
  EXPECT_EQ(layer_kind(1), LayerKind::kLdt);
  EXPECT_EQ(layer_kind(2), LayerKind::kDiffAttn);
}

TEST(GroupFusion, IdentityConfiguration) {
  Rng rng(1);
  const Tensor x = rng.normal_tensor({3, 5, 4});
  EXPECT_EQ(group_fusion(x, Tensor({4, 4}), Tensor::identity(4), Tensor({4})), x);
}

TEST(GroupFusion, ZeroInputGivesMixedEmbeddings) {
  Rng rng(2);
  const Tensor embed = rng.normal_tensor({3, 4});
  const Tensor mix = rng.normal_tensor({4, 4});
  const Tensor out = group_fusion(Tensor({2, 3, 4}), embed, mix, Tensor({4}));
  const Tensor want = matmul(embed, mix);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(n, t, c), want.at(n, c), 1e-15);
}

TEST(GroupFusion, DistinctEmbeddingsSeparateEqualInputs) {
  Rng rng(3);
  const Tensor row = rng.normal_tensor({1, 4, 4});
  Tensor x({2, 4, 4});
  for (std::size_t i = 0; i < row.size(); ++i) x[i] = x[i + row.size()] = row[i];
  const Tensor out = group_fusion(x, rng.normal_tensor({2, 4}), rng.normal_tensor({4, 4}), Tensor({4}));
  bool differ = false;
  for (std::size_t i = 0; i < row.size(); ++i) differ |= out[i] != out[i + row.size()];
  EXPECT_TRUE(differ);
}

TEST(GroupFusion, TooManyDancersIsConfigError) {
  EXPECT_THROW(group_fusion(Tensor({3, 2, 4}), Tensor({2, 4}), Tensor::identity(4), Tensor({4})), ConfigError);
}

TEST(TimestepEmbedding, ZeroStepIsSinZeroCosOne) {
  const Tensor e = sinusoidal_embedding(0.0, 8);
  for (std::size_t i = 0; i < 8; i += 2) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[i + 1], 1.0);
  }
}

TEST(TimestepEmbedding, OddWidthRejected) {
  EXPECT_THROW(sinusoidal_embedding(1.0, 7), ConfigError);
}

TEST(TimestepEmbedding, DeterministicAndCollisionFree) {
  Rng rng(4);
  const Tensor w = rng.normal_tensor({8, 8}), b = rng.normal_tensor({8});
  EXPECT_EQ(timestep_embedding(3, 8, w, b), timestep_embedding(3, 8, w, b));
  std::set<std::vector<double>> seen;
  for (int t = 0; t <= 50; ++t) seen.insert(timestep_embedding(t, 8, w, b).values());
  EXPECT_EQ(seen.size(), 51u);
}

TEST(Forward, PreservesShapeAcrossGrid) {
  const DenoiserConfig cfg = small_config();
  const DenoiserState state = init_state(cfg, 5);
  Rng rng(5);
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t len : {8u, 13u, 32u}) {
      const Tensor x = rng.normal_tensor({n, len, cfg.d_in});
      const Tensor out = forward(x, rng.normal_tensor({len, cfg.cond_dim}), 3, state, cfg);
      EXPECT_EQ(out.shape(), x.shape());
    }
}

TEST(Forward, BitIdenticalAcrossRuns) {
  const DenoiserConfig cfg = small_config();
  Rng rng(6);
  const Tensor x = rng.normal_tensor({3, 10, cfg.d_in});
  const Tensor music = rng.normal_tensor({10, cfg.cond_dim});
  EXPECT_EQ(forward(x, music, 7, init_state(cfg, 1), cfg), forward(x, music, 7, init_state(cfg, 1), cfg));
}

TEST(Forward, PermutationEquivariantWithUniformEmbeddings) {
  const DenoiserConfig cfg = small_config();
  DenoiserState state = init_state(cfg, 7);
  Tensor& embed = state.params.get("group_fusion.embed").value;
  for (std::size_t n = 1; n < embed.dim(0); ++n)
    for (std::size_t c = 0; c < embed.dim(1); ++c) embed.at(n, c) = embed.at(0, c);
  Rng rng(7);
  const std::size_t n = 4, len = 9, d = cfg.d_in;
  const Tensor x = rng.normal_tensor({n, len, d});
  const Tensor music = rng.normal_tensor({len, cfg.cond_dim});
  const std::size_t perm[] = {2, 0, 3, 1};
  Tensor xp(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c) xp.at(i, t, c) = x.at(perm[i], t, c);
  const Tensor out = forward(x, music, 4, state, cfg);
  const Tensor outp = forward(xp, music, 4, state, cfg);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c) err = std::max(err, std::abs(outp.at(i, t, c) - out.at(perm[i], t, c)));
  EXPECT_LE(err, 1e-9);
}

TEST(Forward, SensitiveToMusic) {
  const DenoiserConfig cfg = small_config();
  const DenoiserState state = init_state(cfg, 8);
  Rng rng(8);
  const Tensor x = rng.normal_tensor({2, 8, cfg.d_in});
  const Tensor a = forward(x, rng.normal_tensor({8, cfg.cond_dim}), 2, state, cfg);
  const Tensor b = forward(x, rng.normal_tensor({8, cfg.cond_dim}), 2, state, cfg);
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(Forward, ShapeMismatchThrows) {
  const DenoiserConfig cfg = small_config();
  const DenoiserState state = init_state(cfg, 9);
  EXPECT_THROW(forward(Tensor({2, 8, cfg.d_in + 1}), Tensor({8, cfg.cond_dim}), 1, state, cfg), DimensionError);
  EXPECT_THROW(forward(Tensor({2, 8, cfg.d_in}), Tensor({7, cfg.cond_dim}), 1, state, cfg), DimensionError);
}

TEST(Forward, NonFiniteActivationNamesBlock) {
  const DenoiserConfig cfg = small_config();
  DenoiserState state = init_state(cfg, 10);
  state.params.get("out.b").value[0] = std::numeric_limits<double>::infinity();
  try {
    forward(Tensor({2, 8, cfg.d_in}), Tensor({8, cfg.cond_dim}), 1, state, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("out"), std::string::npos) << e.what();
  }
}

TEST(State, EveryParameterRegisteredOnceWithGrad) {
  const DenoiserState state = init_state(small_config(), 11);
  std::set<std::string> names;
  for (const Parameter& p : state.params.params()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_EQ(p.grad.shape(), p.value.shape()) << p.name;
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const DenoiserConfig cfg = small_config();
  const DenoiserState state = init_state(cfg, 12);
  io::KeyValues meta;
  meta.set("step", "17");
  const Checkpoint ckpt = make_checkpoint(cfg, state, meta, {{"extra", Tensor::vector({1.5, -0.25})}});
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ckpt));
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.meta, meta);
  EXPECT_EQ(state_from_checkpoint(back).params, state.params);
  ASSERT_NE(find_tensor(back, "extra"), nullptr);
  EXPECT_EQ(*find_tensor(back, "extra"), Tensor::vector({1.5, -0.25}));
}

TEST(Checkpoint, BadMagicRejected) {
  std::string bytes = encode_checkpoint(make_checkpoint(small_config(), init_state(small_config(), 1)));
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncationRejected) {
  const std::string bytes = encode_checkpoint(make_checkpoint(small_config(), init_state(small_config(), 1)));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 5)), FormatError);
}

}  // namespace
}  // namespace stgd::model
