// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "stgd/dataset.hpp"
#include "stgd/io.hpp"

namespace stgd::data {
namespace {

double brute_min_distance(const Tensor& m) {
  double best = INFINITY;
  for (std::size_t t = 0; t < m.dim(1); ++t)
    for (std::size_t a = 0; a < m.dim(0); ++a)
      for (std::size_t b = a + 1; b < m.dim(0); ++b)
        best = std::min(best, std::hypot(m.at(a, t, 0) - m.at(b, t, 0), m.at(a, t, 1) - m.at(b, t, 1)));
  return best;
}

TEST(Synthetic, CircleClearanceIsChord) {
  for (std::size_t n : {2u, 3u, 5u, 8u}) {
    SynthOptions o;
    o.n_dancers = n;
    o.radius = 2.0;
    o.seed = n;
    const MotionSample s = gen_synthetic(o);
    const double chord = 2.0 * 2.0 * std::sin(std::numbers::pi / n);
    EXPECT_NEAR(brute_min_distance(s.motion), chord, 1e-9) << n;
    EXPECT_NEAR(min_pairwise_distance(s.motion), chord, 1e-9) << n;
  }
}

TEST(Synthetic, SameSeedIdentical) {
  SynthOptions o;
  o.seed = 5;
  o.style = Style::kFigure8;
  EXPECT_EQ(gen_synthetic(o), gen_synthetic(o));
  SynthOptions p = o;
  p.seed = 6;
  EXPECT_NE(gen_synthetic(o).motion, gen_synthetic(p).motion);
}

TEST(Synthetic, CrossoverNeverIntersects) {
  SynthOptions o;
  o.style = Style::kCrossover;
  o.n_dancers = 4;
  o.length = 400;
  EXPECT_EQ(oracle::tif(gen_synthetic(o).motion, 0.1), 0.0);
}

TEST(Synthetic, ClearanceAndBoundsOverSeedSweep) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthOptions o;
    o.seed = seed;
    o.style = static_cast<Style>(seed % 4);
    o.n_dancers = 2 + seed % 5;
    o.length = 60;
    const MotionSample s = gen_synthetic(o);
    EXPECT_GE(min_pairwise_distance(s.motion), kDefaultClearance) << seed;
    for (std::size_t n = 0; n < s.n_dancers(); ++n)
      for (std::size_t t = 0; t < s.length(); ++t)
        for (std::size_t c = 0; c < s.channels(); ++c) {
          ASSERT_LE(std::abs(s.motion.at(n, t, c)), 10.0);
          if (t > 0) ASSERT_LE(std::abs(s.motion.at(n, t, c) - s.motion.at(n, t - 1, c)), 1.0);
        }
  }
}

TEST(Synthetic, BeatPhaseOnUnitCircle) {
  const MotionSample s = gen_synthetic(SynthOptions{});
  ASSERT_EQ(s.music.dim(1), kConditionChannels);
  for (std::size_t t = 0; t < s.length(); ++t)
    EXPECT_NEAR(s.music.at(t, 0) * s.music.at(t, 0) + s.music.at(t, 1) * s.music.at(t, 1), 1.0, 1e-12);
}

TEST(Synthetic, ContactMaskDefaultsToZero) {
  EXPECT_EQ(max_abs(gen_synthetic(SynthOptions{}).contact_mask), 0.0);
}

TEST(Synthetic, UnknownStyleListsValidNames) {
  try {
    parse_style("waltz");
    FAIL();
  } catch (const ConfigError& e) {
    for (const std::string& name : style_names()) EXPECT_NE(std::string(e.what()).find(name), std::string::npos);
  }
}

TEST(Synthetic, PresetsMatchPublishedShapes) {
  EXPECT_EQ(preset("short").length, 120u);
  EXPECT_EQ(preset("short").n_dancers, 3u);
  EXPECT_EQ(preset("long").length, 400u);
  EXPECT_EQ(preset("long").n_dancers, 3u);
}

TEST(Normalization, RoundTrip) {
  const MotionSample s = gen_synthetic(SynthOptions{});
  const Tensor back = denormalize(normalize(s.motion, s.mean, s.std), s.mean, s.std);
  EXPECT_LE(max_abs_diff(back, s.motion), 1e-12);
}

TEST(MotionFile, RoundTripIsBitIdentical) {
  SynthOptions o;
  o.n_dancers = 3;
  o.length = 120;
  o.channels = 8;
  MotionSample s = gen_synthetic(o);
  s.contact_mask.at(1, 7) = 1.0;
  const std::string bytes = encode_motion(s);
  EXPECT_EQ(decode_motion(bytes), s);
  const auto path = std::filesystem::temp_directory_path() / "stgd_motion_roundtrip.stgd";
  save_motion(s, path);
  EXPECT_EQ(load_motion(path), s);
  std::filesystem::remove(path);
}

TEST(MotionFile, HeaderEchoesShape) {
  SynthOptions o;
  o.n_dancers = 3;
  o.length = 120;
  const std::string bytes = encode_motion(gen_synthetic(o));
  const std::string head = bytes.substr(0, bytes.find("\n\n"));
  const io::KeyValues kv = io::KeyValues::parse(head.substr(head.find('\n') + 1));
  EXPECT_EQ(head.rfind(kMotionMagic, 0), 0u);
  EXPECT_EQ(kv.get("n_dancers"), "3");
  EXPECT_EQ(kv.get("frames"), "120");
  EXPECT_EQ(kv.get("channels"), "8");
}

TEST(MotionFile, CorruptMagicAndTruncationRejected) {
  std::string bytes = encode_motion(gen_synthetic(SynthOptions{}));
  std::string bad = bytes;
  bad[2] = 'X';
  EXPECT_THROW(decode_motion(bad), FormatError);
  try {
    decode_motion(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(MotionFile, CsvHasOneRowPerValue) {
  SynthOptions o;
  o.n_dancers = 2;
  o.length = 3;
  const std::string csv = motion_csv(gen_synthetic(o));
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 1 + 2 * 3 * 8);
}

TEST(Dataset, PooledStatsShared) {
  const SyntheticDataset ds = make_dataset(3, 30, 4, 2);
  ASSERT_EQ(ds.samples.size(), 4u);
  for (const MotionSample& s : ds.samples) {
    EXPECT_EQ(s.mean, ds.samples[0].mean);
    EXPECT_EQ(s.std, ds.samples[0].std);
  }
}

}  // namespace
}  // namespace stgd::data
