// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "stgd/tensor.hpp"

namespace stgd {

/// Seeded generator with a portable normal sampler. std::normal_distribution
/// is implementation-defined, so Box-Muller is done by hand on top of the
/// fully specified mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  std::uint64_t next_u64() { return engine_(); }

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministic 64-bit mix used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace stgd
