// SPDX-License-Identifier: Apache-2.0
#include "stgd/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

namespace stgd::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("expected a number, got '" + t + "'");
  }
  return v;
}

long long parse_int(std::string_view s) {
  const std::string t = trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("expected an integer, got '" + t + "'");
  }
  return v;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

void ByteWriter::put_u32(std::uint32_t v) {
  v = to_little(v);
  buffer_.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void ByteWriter::put_u64(std::uint64_t v) {
  v = to_little(v);
  buffer_.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_f64s(std::span<const double> values) {
  buffer_.reserve(buffer_.size() + values.size() * 8);
  for (double v : values) put_f64(v);
}

void ByteWriter::put_bytes(std::string_view bytes) { buffer_.append(bytes); }

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated input while reading ") + what, offset_);
  }
}

std::uint32_t ByteReader::get_u32() {
  need(4, "u32");
  std::uint32_t v;
  std::memcpy(&v, bytes_.data() + offset_, 4);
  offset_ += 4;
  return to_little(v);
}

std::uint64_t ByteReader::get_u64() {
  need(8, "u64");
  std::uint64_t v;
  std::memcpy(&v, bytes_.data() + offset_, 8);
  offset_ += 8;
  return to_little(v);
}

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::vector<double> ByteReader::get_f64s(std::size_t count) {
  if (count > remaining() / 8) {
    throw FormatError("truncated payload: need " + std::to_string(count) + " values", offset_);
  }
  std::vector<double> out(count);
  for (auto& v : out) v = get_f64();
  return out;
}

std::string ByteReader::get_bytes(std::size_t count) {
  need(count, "bytes");
  std::string out(bytes_.substr(offset_, count));
  offset_ += count;
  return out;
}

std::string ByteReader::get_line() {
  const std::size_t pos = bytes_.find('\n', offset_);
  if (pos == std::string_view::npos) throw FormatError("unterminated header line", offset_);
  std::string out(bytes_.substr(offset_, pos - offset_));
  offset_ = pos + 1;
  return out;
}

void KeyValues::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

bool KeyValues::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

const std::string& KeyValues::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ConfigError("missing key '" + key + "'");
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (kv.has(key)) throw ConfigError("duplicate key '" + key + "'");
    kv.entries_.emplace_back(key, trim(std::string_view(line).substr(eq + 1)));
  }
  return kv;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::system_error(errno, std::generic_category(), "short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace stgd::io
