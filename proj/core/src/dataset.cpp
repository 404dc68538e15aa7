// SPDX-License-Identifier: Apache-2.0
#include "stgd/dataset.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "stgd/io.hpp"
#include "stgd/rng.hpp"

namespace stgd::data {

namespace {

constexpr double kPi = std::numbers::pi;

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  parts.reserve(v.size());
  for (double x : v) parts.push_back(io::format_double(x));
  return join(parts, ',');
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : io::split(s, ',')) out.push_back(io::parse_double(p));
  return out;
}

double limb_phase_offset(Style style, std::size_t dancer, std::size_t n_dancers) {
  const double n = static_cast<double>(dancer);
  switch (style) {
    case Style::kCircle: return 2.0 * kPi * n / static_cast<double>(n_dancers);
    case Style::kLine: return 0.0;
    case Style::kFigure8: return kPi * n;
    case Style::kCrossover: return kPi * n / static_cast<double>(n_dancers);
  }
  return 0.0;
}

/// Root (x, y) of one dancer at beat phase `phase`.
std::pair<double, double> root_position(const SynthOptions& o, std::size_t dancer, double phase0,
                                        double phase) {
  const double n = static_cast<double>(dancer);
  const double centered = n - 0.5 * static_cast<double>(o.n_dancers - 1);
  switch (o.style) {
    case Style::kCircle: {
      // One revolution every four beats; dancers equally spaced on the ring.
      const double angle =
          phase0 + 2.0 * kPi * n / static_cast<double>(o.n_dancers) + (phase - phase0) / 4.0;
      return {o.radius * std::cos(angle), o.radius * std::sin(angle)};
    }
    case Style::kLine:
      return {centered * o.spacing + 0.3 * std::sin(phase), 0.5 * std::sin(0.5 * phase)};
    case Style::kFigure8:
      return {centered * 2.0 * o.spacing + 0.6 * std::sin(0.5 * phase), 0.4 * std::sin(phase)};
    case Style::kCrossover:
      // Separate lanes; x sweeps are time-offset per dancer so paths cross in
      // x while the lane gap keeps them apart.
      return {2.5 * std::sin(0.5 * phase + kPi * n / static_cast<double>(o.n_dancers)),
              centered * o.spacing};
  }
  return {0.0, 0.0};
}

void compute_stats(const std::vector<const Tensor*>& motions, std::vector<double>& mean,
                   std::vector<double>& stdev) {
  const std::size_t d = motions.front()->dim(2);
  mean.assign(d, 0.0);
  stdev.assign(d, 0.0);
  std::size_t count = 0;
  for (const Tensor* m : motions) {
    const std::size_t rows = m->size() / d;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += (*m)[r * d + c];
    count += rows;
  }
  for (double& v : mean) v /= static_cast<double>(count);
  for (const Tensor* m : motions) {
    const std::size_t rows = m->size() / d;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double dev = (*m)[r * d + c] - mean[c];
        stdev[c] += dev * dev;
      }
  }
  for (double& v : stdev) {
    v = std::sqrt(v / static_cast<double>(count));
    if (!(v > 1e-8)) v = 1.0;
  }
}

}  // namespace

const std::vector<std::string>& style_names() {
  static const std::vector<std::string> names{"circle", "line", "figure8", "crossover"};
  return names;
}

Style parse_style(std::string_view name) {
  if (name == "circle") return Style::kCircle;
  if (name == "line") return Style::kLine;
  if (name == "figure8") return Style::kFigure8;
  if (name == "crossover") return Style::kCrossover;
  throw ConfigError("unknown style '" + std::string(name) + "' (valid: " + join(style_names(), ',') +
                    ")");
}

std::string style_name(Style s) { return style_names().at(static_cast<std::size_t>(s)); }

MotionSample gen_synthetic(const SynthOptions& o) {
  if (o.n_dancers < 1) throw ConfigError("gen_synthetic: need at least one dancer");
  if (o.length < 2) throw ConfigError("gen_synthetic: need at least two frames");
  if (o.channels < 2) throw ConfigError("gen_synthetic: need at least the two root channels");
  if (!(o.tempo > 0.0 && o.tempo <= kMaxTempo)) {
    throw ConfigError("gen_synthetic: tempo must lie in (0, " + io::format_double(kMaxTempo) + "]");
  }

  Rng rng(o.seed);
  const double phase0 = rng.uniform(0.0, 2.0 * kPi);
  const std::size_t n_d = o.n_dancers, len = o.length, d = o.channels;

  MotionSample s;
  s.motion = Tensor({n_d, len, d});
  s.music = Tensor({len, kConditionChannels});
  s.contact_mask = Tensor({n_d, len});
  s.style = style_name(o.style);
  s.tempo = o.tempo;
  s.seed = o.seed;
  s.channel_names = {"root_x", "root_y"};
  for (std::size_t k = 2; k < d; ++k) s.channel_names.push_back("limb_" + std::to_string(k - 2));

  for (std::size_t l = 0; l < len; ++l) {
    const double phase = phase0 + 2.0 * kPi * o.tempo * static_cast<double>(l);
    s.music.at(l, 0) = std::sin(phase);
    s.music.at(l, 1) = std::cos(phase);
    s.music.at(l, 2) = std::sin(2.0 * phase);
    s.music.at(l, 3) = std::cos(2.0 * phase);
    s.music.at(l, 4 + static_cast<std::size_t>(o.style)) = 1.0;
    s.music.at(l, 8) = o.tempo * 30.0;
    for (std::size_t n = 0; n < n_d; ++n) {
      const auto [x, y] = root_position(o, n, phase0, phase);
      s.motion.at(n, l, 0) = x;
      s.motion.at(n, l, 1) = y;
      const double offset = limb_phase_offset(o.style, n, n_d);
      for (std::size_t k = 0; k + 2 < d; ++k) {
        const double amp = 0.8 + 0.1 * static_cast<double>(k % 3);
        const double harmonic = 1.0 + static_cast<double>(k % 2);
        s.motion.at(n, l, k + 2) =
            amp * std::sin(harmonic * phase + 0.5 * static_cast<double>(k) + offset);
      }
    }
  }
  compute_stats({&s.motion}, s.mean, s.std);
  return s;
}

Preset preset(std::string_view name) {
  if (name == "short") return {3, 120};
  if (name == "long") return {3, 400};
  throw ConfigError("unknown preset '" + std::string(name) + "' (valid: short,long)");
}

void assign_pooled_stats(SyntheticDataset& ds) {
  if (ds.samples.empty()) return;
  std::vector<const Tensor*> motions;
  for (const auto& s : ds.samples) motions.push_back(&s.motion);
  std::vector<double> mean, stdev;
  compute_stats(motions, mean, stdev);
  for (auto& s : ds.samples) {
    s.mean = mean;
    s.std = stdev;
  }
}

SyntheticDataset make_dataset(std::size_t n_dancers, std::size_t length, std::size_t count,
                              std::uint64_t seed, double tempo) {
  if (count == 0) throw ConfigError("make_dataset: count must be positive");
  SyntheticDataset ds;
  ds.seed = seed;
  for (std::size_t i = 0; i < count; ++i) {
    SynthOptions o;
    o.n_dancers = n_dancers;
    o.length = length;
    o.style = static_cast<Style>(i % 4);
    o.tempo = tempo;
    o.seed = mix_seed(seed, i);
    ds.samples.push_back(gen_synthetic(o));
  }
  assign_pooled_stats(ds);
  return ds;
}

SyntheticDataset default_dataset(std::uint64_t seed) { return make_dataset(3, 120, 8, seed); }

Tensor normalize(const Tensor& motion, const std::vector<double>& mean, const std::vector<double>& std) {
  const std::size_t d = motion.cols();
  if (mean.size() != d || std.size() != d) throw DimensionError("normalize: stats width mismatch");
  Tensor out = motion;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) / std[i % d];
  return out;
}

Tensor denormalize(const Tensor& motion, const std::vector<double>& mean,
                   const std::vector<double>& std) {
  const std::size_t d = motion.cols();
  if (mean.size() != d || std.size() != d) throw DimensionError("denormalize: stats width mismatch");
  Tensor out = motion;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * std[i % d] + mean[i % d];
  return out;
}

double min_pairwise_distance(const Tensor& motion, std::pair<std::size_t, std::size_t> ch) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = motion.dim(0), len = motion.dim(1);
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dist = std::hypot(motion.at(i, l, ch.first) - motion.at(j, l, ch.first),
                                       motion.at(i, l, ch.second) - motion.at(j, l, ch.second));
        best = std::min(best, dist);
      }
  return best;
}

std::string encode_motion(const MotionSample& s) {
  if (s.motion.rank() != 3) throw DimensionError("encode_motion: motion must be [N x L x d]");
  const std::size_t n = s.n_dancers(), len = s.length(), d = s.channels();
  if (s.music.rank() != 2 || s.music.dim(0) != len) {
    throw DimensionError("encode_motion: conditioning frame count differs from motion");
  }
  if (s.contact_mask.shape() != Shape{n, len}) {
    throw DimensionError("encode_motion: contact mask must be [N x L]");
  }
  if (s.channel_names.size() != d || s.mean.size() != d || s.std.size() != d) {
    throw DimensionError("encode_motion: channel metadata width differs from motion");
  }
  io::KeyValues kv;
  kv.set("n_dancers", std::to_string(n));
  kv.set("frames", std::to_string(len));
  kv.set("channels", std::to_string(d));
  kv.set("cond_channels", std::to_string(s.music.dim(1)));
  kv.set("channel_names", join(s.channel_names, ','));
  kv.set("position_channels",
         std::to_string(s.position_channels.first) + "," + std::to_string(s.position_channels.second));
  kv.set("mean", join_doubles(s.mean));
  kv.set("std", join_doubles(s.std));
  kv.set("style", s.style);
  kv.set("tempo", io::format_double(s.tempo));
  kv.set("seed", std::to_string(s.seed));

  io::ByteWriter w;
  w.put_bytes(std::string(kMotionMagic) + "\n" + kv.to_text() + "\n");
  w.put_f64s(s.motion.data());
  w.put_u64(s.music.size());
  w.put_f64s(s.music.data());
  w.put_u64(s.contact_mask.size());
  w.put_f64s(s.contact_mask.data());
  return w.bytes();
}

MotionSample decode_motion(std::string_view bytes) {
  io::ByteReader r(bytes);
  std::string magic;
  try {
    magic = r.get_line();
  } catch (const FormatError&) {
    throw FormatError("missing STGD-MOT-1 magic", 0);
  }
  if (magic != kMotionMagic) throw FormatError("bad magic '" + magic + "', expected STGD-MOT-1", 0);

  std::string header;
  for (std::string line; !(line = r.get_line()).empty();) header += line + "\n";
  const std::size_t header_end = r.offset();

  MotionSample s;
  std::size_t n = 0, len = 0, d = 0, c = 0;
  try {
    const auto kv = io::KeyValues::parse(header);
    n = static_cast<std::size_t>(io::parse_int(kv.get("n_dancers")));
    len = static_cast<std::size_t>(io::parse_int(kv.get("frames")));
    d = static_cast<std::size_t>(io::parse_int(kv.get("channels")));
    c = static_cast<std::size_t>(io::parse_int(kv.get("cond_channels")));
    s.channel_names = io::split(kv.get("channel_names"), ',');
    const auto pc = io::split(kv.get("position_channels"), ',');
    if (pc.size() != 2) throw ConfigError("position_channels must be 'i,j'");
    s.position_channels = {static_cast<std::size_t>(io::parse_int(pc[0])),
                           static_cast<std::size_t>(io::parse_int(pc[1]))};
    s.mean = parse_doubles(kv.get("mean"));
    s.std = parse_doubles(kv.get("std"));
    s.style = kv.get("style");
    s.tempo = io::parse_double(kv.get("tempo"));
    s.seed = static_cast<std::uint64_t>(std::stoull(kv.get("seed")));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what(), header_end);
  }
  if (n == 0 || len == 0 || d == 0) throw FormatError("empty motion dimensions", header_end);
  if (s.channel_names.size() != d || s.mean.size() != d || s.std.size() != d) {
    throw FormatError("channel metadata does not match channels=" + std::to_string(d), header_end);
  }
  if (s.position_channels.first >= d || s.position_channels.second >= d) {
    throw FormatError("position channel out of range", header_end);
  }

  s.motion = Tensor({n, len, d}, r.get_f64s(n * len * d));
  std::size_t at = r.offset();
  const std::uint64_t cond_count = r.get_u64();
  if (cond_count != len * c) {
    throw FormatError("conditioning length " + std::to_string(cond_count) + " != frames*cond_channels",
                      at);
  }
  s.music = Tensor({len, c}, r.get_f64s(cond_count));
  at = r.offset();
  const std::uint64_t mask_count = r.get_u64();
  if (mask_count != n * len) throw FormatError("contact mask length != n_dancers*frames", at);
  s.contact_mask = Tensor({n, len}, r.get_f64s(mask_count));
  if (!r.at_end()) throw FormatError("trailing bytes after contact mask", r.offset());
  return s;
}

void save_motion(const MotionSample& s, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_motion(s));
}

MotionSample load_motion(const std::filesystem::path& path) { return decode_motion(io::read_file(path)); }

std::string motion_csv(const MotionSample& s) {
  std::ostringstream os;
  os << "frame,dancer,channel,value\n";
  for (std::size_t l = 0; l < s.length(); ++l)
    for (std::size_t n = 0; n < s.n_dancers(); ++n)
      for (std::size_t c = 0; c < s.channels(); ++c)
        os << l << ',' << n << ',' << s.channel_names[c] << ',' << io::format_double(s.motion.at(n, l, c))
           << '\n';
  return os.str();
}

}  // namespace stgd::data
