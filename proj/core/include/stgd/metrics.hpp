// SPDX-License-Identifier: Apache-2.0
//
// Group-coordination proxies computed from root trajectories. These are
// desk-scale stand-ins; their values are not comparable to published
// TIF/GMC/Div numbers, and reports label them "proxy".
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::metrics {

using Channels = std::pair<std::size_t, std::size_t>;

inline constexpr double kDefaultDelta = 0.1;

/// Fraction of frames where some dancer pair is closer than delta (strict).
double tif(const Tensor& motion, double delta = kDefaultDelta, Channels channels = {0, 1});

/// Mean Pearson correlation of per-frame root speed over dancer pairs.
/// Pairs with a constant speed stream are skipped.
double gmc_proxy(const Tensor& motion, Channels channels = {0, 1});

/// Mean pairwise Euclidean distance between flattened motions after pooled
/// per-channel z-normalization.
double diversity(const std::vector<Tensor>& samples);
/// Same, with caller-provided per-channel statistics.
double diversity(const std::vector<Tensor>& samples, const std::vector<double>& mean,
                 const std::vector<double>& std);

struct MetricReport {
  double tif = 0.0;
  std::optional<double> gmc_proxy;
  std::optional<double> diversity;
  double delta = kDefaultDelta;

  std::string to_json() const;  // single line
  static MetricReport from_json(const std::string& text);

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// tif plus gmc_proxy when defined; diversity only with two or more samples.
MetricReport evaluate(const std::vector<Tensor>& samples, double delta = kDefaultDelta,
                      Channels channels = {0, 1});

/// frame,dancer_a,dancer_b,distance rows.
std::string pair_distance_csv(const Tensor& motion, Channels channels = {0, 1});

}  // namespace stgd::metrics
