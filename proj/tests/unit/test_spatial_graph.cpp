// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "stgd/rng.hpp"
#include "stgd/spatial_graph.hpp"

namespace stgd::graph {
namespace {

TEST(Adjacency, InverseDistanceWithEpsilon) {
  const Tensor a = build_adjacency(Tensor::matrix({{0, 0}, {3, 4}}), 0.1);
  EXPECT_DOUBLE_EQ(a.at(0, 1), 1.0 / 5.1);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 1.0 / 5.1);
  EXPECT_DOUBLE_EQ(a.at(0, 0), 1.0 / 0.1);
}

TEST(Adjacency, CoincidentDancersStayBounded) {
  const Tensor a = build_adjacency(Tensor::matrix({{1, 1}, {1, 1}}), 0.1);
  EXPECT_DOUBLE_EQ(a.at(0, 1), 10.0);
}

TEST(Adjacency, NonPositiveEpsilonRejected) {
  EXPECT_THROW(build_adjacency(Tensor::matrix({{0, 0}, {1, 0}}), 0.0), ConfigError);
}

TEST(Prune, ThreeNodeChainKeepsNearestEdges) {
  // 1 -- 2 -- 3 on a line; with k = 1 the long 1-3 edge disappears.
  const Tensor a = build_adjacency(Tensor::matrix({{0, 0}, {1, 0}, {2.5, 0}}), 0.1);
  const Tensor p = prune_topk(a, 1);
  EXPECT_GT(p.at(0, 1), 0.0);
  EXPECT_GT(p.at(1, 2), 0.0);
  EXPECT_EQ(p.at(0, 2), 0.0);
  EXPECT_EQ(p.at(2, 0), 0.0);
}

TEST(Normalize, TwoNodeHandValue) {
  // A = [[10, 0.2], [0.2, 10]]: both degrees 10.2.
  const Tensor n = normalize_adjacency(Tensor::matrix({{10, 0.2}, {0.2, 10}}));
  EXPECT_NEAR(n.at(0, 1), 0.2 / 10.2, 1e-15);
}

TEST(Normalize, MatchesLoopOracleWithAndWithoutPruning) {
  Rng rng(11);
  for (std::size_t n : {2u, 5u, 9u, 14u}) {
    const Tensor pos = rng.uniform_tensor({n, 2}, -3.0, 3.0);
    for (std::size_t k : {0u, 1u, 3u}) {
      const Tensor got = normalize_adjacency(prune_topk(build_adjacency(pos, 0.1), k == 0 ? n : k));
      const auto want = oracle::normalized_adjacency(oracle::to_matrix(pos), 0.1, k);
      EXPECT_LE(oracle::max_abs_diff(want, got), 1e-14) << "n=" << n << " k=" << k;
    }
  }
}

TEST(Normalize, SymmetricWithSpectralRadiusAtMostOne) {
  Rng rng(12);
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = 2 + c % 12;
    const DistanceGraph g = build_graph(rng.uniform_tensor({n, 2}, -2.0, 2.0), 0.1, 1 + c % 3);
    EXPECT_EQ(g.normalized, transpose(g.normalized));
    EXPECT_LE(oracle::spectral_radius(oracle::to_matrix(g.normalized)), 1.0 + 1e-9);
  }
}

TEST(DefaultTopK, NoPruningForSmallGroups) {
  EXPECT_GE(default_top_k(3), 2u);
  EXPECT_EQ(default_top_k(32), 8u);
}

TEST(Gcn, SingleNodeGraph) {
  const DistanceGraph g = build_graph(Tensor::matrix({{0.5, 0.5}}), 0.1);
  EXPECT_DOUBLE_EQ(g.normalized.at(0, 0), 1.0);
  const Tensor out = gcn_layer(Tensor::matrix({{1, -2}}), g.normalized, Tensor::identity(2));
  EXPECT_EQ(out, Tensor::matrix({{1, 0}}));
}

TEST(Gcn, MatchesLoopOracle) {
  Rng rng(13);
  const Tensor pos = rng.uniform_tensor({6, 2}, -1.0, 1.0);
  const Tensor h = rng.normal_tensor({6, 4});
  const Tensor w = rng.normal_tensor({4, 3});
  const DistanceGraph g = build_graph(pos, 0.1, 2);
  const auto want = oracle::gcn_layer(oracle::to_matrix(h), oracle::to_matrix(g.normalized), oracle::to_matrix(w));
  EXPECT_LE(oracle::max_abs_diff(want, gcn_layer(h, g.normalized, w)), 1e-13);
}

TEST(Gcn, PermutationEquivariant) {
  Rng rng(14);
  const std::size_t n = 7;
  const Tensor pos = rng.uniform_tensor({n, 2}, -2.0, 2.0);
  const Tensor h = rng.normal_tensor({n, 3});
  const Tensor w = rng.normal_tensor({3, 3});
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  Tensor pos_p({n, 2}), h_p({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 2; ++c) pos_p.at(i, c) = pos.at(perm[i], c);
    for (std::size_t c = 0; c < 3; ++c) h_p.at(i, c) = h.at(perm[i], c);
  }
  const Tensor out = gcn_layer(h, build_graph(pos, 0.1).normalized, w);
  const Tensor out_p = gcn_layer(h_p, build_graph(pos_p, 0.1).normalized, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out_p.at(i, c), out.at(perm[i], c), 1e-12);
}

TEST(Gcn, FramePositionsReadsRootChannels) {
  Tensor motion({2, 3, 4});
  motion.at(1, 2, 2) = 5.0;
  motion.at(1, 2, 3) = -1.0;
  const Tensor p = frame_positions(motion, 2, {2, 3});
  EXPECT_EQ(p.at(1, 0), 5.0);
  EXPECT_EQ(p.at(1, 1), -1.0);
}

}  // namespace
}  // namespace stgd::graph
