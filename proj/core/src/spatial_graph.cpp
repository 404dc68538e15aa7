// SPDX-License-Identifier: Apache-2.0
#include "stgd/spatial_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace stgd::graph {

namespace {

void require_square(const Tensor& a, const char* op) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError(std::string(op) + ": expected a square matrix, got " +
                         shape_string(a.shape()));
  }
}

}  // namespace

Tensor build_adjacency(const Tensor& positions, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("build_adjacency: epsilon must be positive, got " + std::to_string(epsilon));
  }
  if (positions.rank() != 2 || positions.dim(1) != 2 || positions.dim(0) == 0) {
    throw DimensionError("build_adjacency: positions must be [N x 2] with N >= 1, got " +
                         shape_string(positions.shape()));
  }
  require_finite(positions, "dancer positions");
  const std::size_t n = positions.dim(0);
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    a.at(i, i) = 1.0 / epsilon;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dist = std::hypot(positions.at(i, 0) - positions.at(j, 0),
                                     positions.at(i, 1) - positions.at(j, 1));
      const double w = 1.0 / (dist + epsilon);
      a.at(i, j) = w;
      a.at(j, i) = w;
    }
  }
  return a;
}

Tensor prune_topk(const Tensor& adjacency, std::size_t k) {
  if (k < 1) throw ConfigError("prune_topk: k must be >= 1");
  require_square(adjacency, "prune_topk");
  const std::size_t n = adjacency.dim(0);
  if (k + 1 >= n) return adjacency;

  std::vector<char> keep(n * n, 0);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double wa = adjacency.at(i, a), wb = adjacency.at(i, b);
                        return wa > wb || (wa == wb && a < b);
                      });
    for (std::size_t r = 0; r < k; ++r) {
      keep[i * n + order[r]] = 1;
      keep[order[r] * n + i] = 1;
    }
  }

  Tensor out = adjacency;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && !keep[i * n + j]) out.at(i, j) = 0.0;
  return out;
}

Tensor normalize_adjacency(const Tensor& pruned) {
  require_square(pruned, "normalize_adjacency");
  const std::size_t n = pruned.dim(0);
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += pruned.at(i, j);
    if (!(deg > 0.0) || !std::isfinite(deg)) {
      throw NumericError("normalize_adjacency: node " + std::to_string(i) +
                         " has non-positive degree");
    }
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = pruned.at(i, j) * (inv_sqrt[i] * inv_sqrt[j]);
  return out;
}

std::size_t default_top_k(std::size_t n_dancers) {
  if (n_dancers <= 8) return n_dancers > 1 ? n_dancers - 1 : 1;
  return 8;
}

DistanceGraph build_graph(const Tensor& positions, double epsilon, std::size_t k) {
  DistanceGraph g;
  g.epsilon = epsilon;
  g.adjacency = build_adjacency(positions, epsilon);
  g.k = k == 0 ? default_top_k(positions.dim(0)) : k;
  g.normalized = normalize_adjacency(prune_topk(g.adjacency, g.k));
  return g;
}

Tensor frame_positions(const Tensor& motion, std::size_t frame,
                       std::pair<std::size_t, std::size_t> position_channels) {
  if (motion.rank() != 3) {
    throw DimensionError("frame_positions: expected [N x L x d] motion, got " +
                         shape_string(motion.shape()));
  }
  const std::size_t n = motion.dim(0);
  if (frame >= motion.dim(1) || position_channels.first >= motion.dim(2) ||
      position_channels.second >= motion.dim(2)) {
    throw DimensionError("frame_positions: frame or channel index out of range");
  }
  Tensor p({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    p.at(i, 0) = motion.at(i, frame, position_channels.first);
    p.at(i, 1) = motion.at(i, frame, position_channels.second);
  }
  return p;
}

Tensor gcn_layer(const Tensor& h, const Tensor& normalized, const Tensor& w) {
  if (h.rank() != 2 || normalized.rank() != 2 || normalized.dim(1) != h.dim(0) ||
      normalized.dim(0) != h.dim(0)) {
    throw DimensionError("gcn_layer: graph " + shape_string(normalized.shape()) +
                         " incompatible with features " + shape_string(h.shape()));
  }
  return relu(matmul(matmul(normalized, h), w));
}

GcnGrads gcn_layer_backward(const Tensor& h, const Tensor& normalized, const Tensor& w,
                            const Tensor& dout) {
  const Tensor propagated = matmul(normalized, h);
  const Tensor pre = matmul(propagated, w);
  const Tensor dpre = relu_backward(pre, dout);
  GcnGrads g;
  g.dw = matmul_tn(propagated, dpre);
  // normalized is symmetric, but use the transpose explicitly so the VJP
  // stays correct for any graph operator.
  g.dh = matmul_tn(normalized, matmul_nt(dpre, w));
  return g;
}

}  // namespace stgd::graph
