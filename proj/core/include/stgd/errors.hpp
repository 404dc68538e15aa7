// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace stgd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a value that makes the math undefined.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyper-parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition (e.g. step index out of range).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A metric is undefined for the given input (too few dancers, zero variance...).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// A benchmark could not produce a usable measurement.
class BenchError : public Error {
 public:
  using Error::Error;
};

}  // namespace stgd
