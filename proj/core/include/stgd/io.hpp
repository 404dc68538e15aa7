// SPDX-License-Identifier: Apache-2.0
//
// Byte-level helpers shared by the motion and checkpoint formats: little-endian
// encoders, an offset-tracking reader, flat key=value blocks and atomic writes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::io {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

class ByteWriter {
 public:
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_f64s(std::span<const double> values);
  void put_bytes(std::string_view bytes);
  const std::string& bytes() const noexcept { return buffer_; }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::size_t offset = 0)
      : bytes_(bytes), offset_(offset) {}

  std::uint32_t get_u32();
  std::uint64_t get_u64();
  double get_f64();
  std::vector<double> get_f64s(std::size_t count);
  std::string get_bytes(std::size_t count);
  /// Reads up to (not including) the next '\n'; consumes the newline.
  std::string get_line();

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
  bool at_end() const noexcept { return offset_ >= bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const;

  std::string_view bytes_;
  std::size_t offset_;
};

/// Ordered key=value block. Keys are unique.
class KeyValues {
 public:
  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_text() const;
  /// Parses "key=value" lines; blank lines and lines starting with '#' are skipped.
  static KeyValues parse(std::string_view text);

  friend bool operator==(const KeyValues&, const KeyValues&) = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// 64-bit FNV-1a, used for manifest hashes.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace stgd::io
