// SPDX-License-Identifier: Apache-2.0
//
// Distance-aware dancer graph: inverse-distance adjacency, top-k pruning,
// symmetric normalization and GCN propagation.
#pragma once

#include <cstddef>
#include <utility>

#include "stgd/tensor.hpp"

namespace stgd::graph {

inline constexpr double kDefaultEpsilon = 0.1;

/// A_ij = 1 / (||p_i - p_j|| + epsilon), diagonal included. positions is [N x 2].
Tensor build_adjacency(const Tensor& positions, double epsilon);

/// Keeps each node's k strongest off-diagonal edges; an edge survives when
/// either endpoint keeps it. Ties go to the lower column index.
Tensor prune_topk(const Tensor& adjacency, std::size_t k);

/// D^{-1/2} A D^{-1/2} with D the row sums of the (pruned) adjacency.
Tensor normalize_adjacency(const Tensor& pruned);

/// Edge budget used when the caller does not set one: no pruning for small
/// groups, 8 neighbours beyond that.
std::size_t default_top_k(std::size_t n_dancers);

struct DistanceGraph {
  Tensor adjacency;   // unpruned
  Tensor normalized;  // pruned + normalized
  std::size_t k = 0;
  double epsilon = kDefaultEpsilon;
};

/// build_adjacency -> prune_topk -> normalize_adjacency. k == 0 means default_top_k.
DistanceGraph build_graph(const Tensor& positions, double epsilon, std::size_t k = 0);

/// [N x 2] root positions of one frame of an [N x L x d] motion tensor.
Tensor frame_positions(const Tensor& motion, std::size_t frame,
                       std::pair<std::size_t, std::size_t> position_channels);

/// ReLU(normalized * h * w). h is [N x din], w is [din x dout].
Tensor gcn_layer(const Tensor& h, const Tensor& normalized, const Tensor& w);

struct GcnGrads {
  Tensor dh;
  Tensor dw;
};

/// Vector-Jacobian product of gcn_layer. The graph is treated as a constant.
GcnGrads gcn_layer_backward(const Tensor& h, const Tensor& normalized, const Tensor& w,
                            const Tensor& dout);

}  // namespace stgd::graph
