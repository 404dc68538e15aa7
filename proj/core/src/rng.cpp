// SPDX-License-Identifier: Apache-2.0
#include "stgd/rng.hpp"

#include <cmath>
#include <numbers>

namespace stgd {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = span == 0 ? 0 : (~std::uint64_t{0} / span) * span;
  std::uint64_t v = engine_();
  if (span == 0) return lo + static_cast<std::int64_t>(v);
  while (v >= limit) v = engine_();
  return lo + static_cast<std::int64_t>(v % span);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(lo, hi);
  return t;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace stgd
