// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stgd::cli {

enum ExitCode : int {
  kOk = 0,
  kValidationFailed = 1,
  kUsage = 2,
  kIo = 3,
  kDivergence = 4,
  kArtifactMismatch = 5,
};

/// Runs one subcommand. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct CheckLine {
  std::string name;  // suite/check
  bool passed = false;
  std::string detail;
};

struct ValidateOptions {
  std::uint64_t seed = 0;
  std::string perturb_block;  // test fixture: corrupt this block's analytic gradient
};

/// The invariant suite behind `stgd validate`.
std::vector<CheckLine> run_validation(const ValidateOptions& opts);

}  // namespace stgd::cli
