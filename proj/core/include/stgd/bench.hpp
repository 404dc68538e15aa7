// SPDX-License-Identifier: Apache-2.0
//
// Wall-time scaling benchmarks for the spatial and temporal kernels, plus a
// closed-form multiply-accumulate model of one denoiser forward pass.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stgd/denoiser.hpp"

namespace stgd::bench {

struct BenchPoint {
  std::size_t size = 0;
  double median_seconds = 0.0;
  std::vector<double> samples;  // raw timings, warmup excluded
  std::uint64_t flops = 0;      // analytic multiply-accumulates
  std::uint64_t checksum = 0;   // hash of the kernel output (deterministic)
};

struct Fit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line through (log size, log time). Needs three or more points.
Fit fit_loglog(const std::vector<double>& sizes, const std::vector<double>& times);

struct BenchResult {
  std::string kernel;
  std::vector<BenchPoint> points;  // surviving points only
  std::vector<std::size_t> dropped;
  std::vector<std::string> warnings;
  Fit fit;

  bool stable(double min_r2 = 0.98) const { return fit.r2 >= min_r2; }
};

struct Options {
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinRepetitions = 5;

/// Kernels: "full", "ldt", "diff". lengths strictly increasing, four or more.
std::vector<BenchResult> bench_attention(const std::vector<std::size_t>& lengths, std::size_t d,
                                         std::size_t window, const Options& opts,
                                         const std::vector<std::string>& kernels = {"full", "ldt", "diff"});

/// Graph construction, normalization and one gcn_layer per frame over
/// `length` frames, for each dancer count.
BenchResult bench_gcn(const std::vector<std::size_t>& dancer_counts, std::size_t length, std::size_t d,
                      const Options& opts);

struct FlopEstimate {
  std::uint64_t spatial = 0;       // GCN propagation and transforms
  std::uint64_t temporal = 0;      // decoder stacks (attention, FiLM, feed-forward)
  std::uint64_t other = 0;         // projections and conditioning
  std::uint64_t full_attention_reference = 0;  // QK^T and PV if every layer were full attention
  std::uint64_t ldt_term = 0;      // LDT kernel sums and queries
  std::uint64_t gcn_quadratic = 0; // the N^2 part of the spatial term
  std::uint64_t total() const { return spatial + temporal + other; }
};

/// Exact multiply-accumulate count of model::forward for the given shape.
FlopEstimate flop_estimate(const model::DenoiserConfig& cfg, std::size_t n_dancers, std::size_t length);

/// Multiply-accumulates of one gcn_layer sweep over L frames: L (N^2 d + N d^2).
std::uint64_t gcn_flops(std::size_t n_dancers, std::size_t length, std::size_t d);
std::uint64_t attention_flops(const std::string& kernel, std::size_t length, std::size_t d);

/// Smallest observable steady_clock increment, in seconds.
double timer_resolution();

/// Throws BenchError when built with internal parallelism enabled.
void require_single_threaded();

/// kernel,size,median_seconds,flops_estimate rows followed by a summary block.
std::string to_csv(const std::vector<BenchResult>& results);
/// Timing-free view (kernel, size, flops, checksum) used for reproducibility checks.
std::string deterministic_summary(const std::vector<BenchResult>& results);

}  // namespace stgd::bench
