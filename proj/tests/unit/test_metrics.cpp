// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stgd/metrics.hpp"
#include "stgd/rng.hpp"

namespace stgd::metrics {
namespace {

Tensor random_walks(std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  Tensor m({n, len, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 1; t < len; ++t)
      for (std::size_t c = 0; c < 2; ++c) m.at(i, t, c) = m.at(i, t - 1, c) + rng.normal();
  return m;
}

TEST(Tif, StaticSeparatedDancers) {
  Tensor m({3, 10, 2});
  for (std::size_t t = 0; t < 10; ++t) {
    m.at(1, t, 0) = 1.0;
    m.at(2, t, 1) = 1.0;
  }
  EXPECT_EQ(tif(m, 0.5), 0.0);
}

TEST(Tif, ThreeCloseFramesOutOfHundred) {
  Tensor m({2, 100, 2});
  for (std::size_t t = 0; t < 100; ++t) m.at(1, t, 0) = (t >= 40 && t < 43) ? 0.05 : 1.0;
  EXPECT_DOUBLE_EQ(tif(m, 0.1), 0.03);
  EXPECT_DOUBLE_EQ(oracle::tif(m, 0.1), 0.03);
}

TEST(Tif, ZeroDeltaNeverFires) {
  EXPECT_EQ(tif(Tensor({2, 5, 2}), 0.0), 0.0);
}

TEST(Tif, SingleDancerUndefined) {
  EXPECT_THROW(tif(Tensor({1, 5, 2})), MetricError);
}

TEST(Tif, MatchesBruteForce) {
  Rng rng(1);
  for (int c = 0; c < 20; ++c) {
    const Tensor m = rng.uniform_tensor({4, 30, 3}, -1.0, 1.0);
    EXPECT_EQ(tif(m, 0.3), oracle::tif(m, 0.3));
  }
}

TEST(Gmc, TranslatedCopiesCorrelatePerfectly) {
  Tensor m = random_walks(1, 50, 2);
  Tensor g({3, 50, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 50; ++t)
      for (std::size_t c = 0; c < 2; ++c) g.at(i, t, c) = m.at(0, t, c) + 3.0 * i;
  EXPECT_NEAR(gmc_proxy(g), 1.0, 1e-12);
}

TEST(Gmc, AntiPhaseSpeedsGiveMinusOne) {
  // Dancer A speed 1 + sin, dancer B speed 1 - sin, both moving along x.
  const std::size_t len = 40;
  Tensor m({2, len, 2});
  std::vector<double> sa, sb;
  for (std::size_t t = 1; t < len; ++t) {
    const double s = 0.5 * std::sin(0.7 * t);
    m.at(0, t, 0) = m.at(0, t - 1, 0) + 1.0 + s;
    m.at(1, t, 0) = m.at(1, t - 1, 0) + 1.0 - s;
    m.at(1, t, 1) = 5.0;
    sa.push_back(1.0 + s);
    sb.push_back(1.0 - s);
  }
  m.at(1, 0, 1) = 5.0;
  EXPECT_NEAR(gmc_proxy(m), oracle::pearson(sa, sb), 1e-12);
  EXPECT_NEAR(gmc_proxy(m), -1.0, 1e-12);
}

TEST(Gmc, IndependentWalksNearZero) {
  EXPECT_LE(std::abs(gmc_proxy(random_walks(3, 10000, 3))), 0.05);
}

TEST(Gmc, ConstantSpeedsUndefined) {
  Tensor m({2, 5, 2});
  for (std::size_t t = 0; t < 5; ++t) {
    m.at(0, t, 0) = t;
    m.at(1, t, 1) = t;
  }
  EXPECT_THROW(gmc_proxy(m), MetricError);
}

TEST(Diversity, DuplicatesAreZeroAndOrderIrrelevant) {
  Rng rng(4);
  const Tensor a = rng.normal_tensor({2, 5, 3}), b = rng.normal_tensor({2, 5, 3}), c = rng.normal_tensor({2, 5, 3});
  EXPECT_EQ(diversity({a, a}), 0.0);
  EXPECT_NEAR(diversity({a, b, c}), diversity({c, a, b}), 1e-12);
  EXPECT_THROW(diversity({a}), MetricError);
}

TEST(Diversity, SingleValueChangeScalesWithMagnitude) {
  const std::vector<double> mean(2, 0.0), std{2.0, 1.0};
  const Tensor a({1, 3, 2});
  for (double v : {0.5, 3.0}) {
    Tensor b = a;
    b.at(0, 1, 0) = v;
    EXPECT_NEAR(diversity({a, b}, mean, std), v / 2.0, 1e-15);
  }
}

TEST(Metrics, TranslationInvariant) {
  Tensor m = random_walks(3, 200, 5);
  Tensor shifted = m;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 200; ++t) {
      shifted.at(i, t, 0) += 12.5;
      shifted.at(i, t, 1) -= 7.25;
    }
  EXPECT_EQ(tif(m, 2.0), tif(shifted, 2.0));
  EXPECT_NEAR(gmc_proxy(m), gmc_proxy(shifted), 1e-9);
}

TEST(Report, JsonRoundTrip) {
  MetricReport r;
  r.tif = 0.03;
  r.gmc_proxy = -0.123456789012345;
  r.diversity = 4.5;
  r.delta = 0.1;
  EXPECT_EQ(MetricReport::from_json(r.to_json()), r);
  EXPECT_NE(r.to_json().find("proxy"), std::string::npos);
  EXPECT_EQ(r.to_json().find('\n'), std::string::npos);
}

TEST(Report, PairDistanceCsv) {
  const std::string csv = pair_distance_csv(Tensor({3, 2, 2}));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);
}

}  // namespace
}  // namespace stgd::metrics
