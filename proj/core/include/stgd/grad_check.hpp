// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every hand-written backward pass.
// Each learnable block registers a check that builds a small seeded instance,
// scalarizes its output with a random projection (or uses the actual loss for
// the end-to-end check) and compares the analytic gradient of every parameter
// against central differences.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::gradcheck {

struct Options {
  double h = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  /// Fraction of entries probed in the end-to-end check (at least one per tensor).
  double sample_fraction = 0.05;
  /// Test hook: corrupt the analytic gradient of this block.
  std::string perturb_block;
};

struct ParamError {
  std::string name;
  double rel_error = 0.0;  // max|a - n| / max(max|a|, max|n|) over probed entries
  std::size_t probed = 0;
};

struct BlockReport {
  std::string block;
  std::vector<ParamError> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

using BlockCheck = std::function<BlockReport(const Options&)>;

/// Block name -> check. Keys are the `block` tags used by ParameterStore.
const std::map<std::string, BlockCheck>& registry();

/// Throws ConfigError ("coverage") when the block has no registered check.
BlockReport run(const std::string& block, const Options& opts = {});
std::vector<BlockReport> run_all(const Options& opts = {});

/// Every learnable block tag that exists in the code base: the tags used by
/// the denoiser plus standalone kernels.
std::set<std::string> learnable_blocks();
/// Tags in learnable_blocks() without a registered check.
std::vector<std::string> uncovered_blocks();

/// (f(x + h) - f(x - h)) / 2h
double central_difference(const std::function<double(double)>& f, double x, double h);

}  // namespace stgd::gradcheck
