// SPDX-License-Identifier: Apache-2.0
//
// Synthetic group-dance data and the STGD-MOT-1 motion file format.
//
// A sample holds N dancers x L frames x d_in channels. Channels 0 and 1 are
// the root (x, y) position; the rest are smooth tempo-locked "limb" signals.
// Music conditioning per frame is [sin/cos beat phase at harmonics 1 and 2,
// style one-hot (4), tempo scaled so 1/30 beats per frame maps to 1].
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::data {

inline constexpr const char* kMotionMagic = "STGD-MOT-1";
inline constexpr std::size_t kConditionChannels = 9;
inline constexpr std::size_t kDefaultChannels = 8;
inline constexpr double kDefaultTempo = 1.0 / 30.0;
inline constexpr double kDefaultClearance = 0.5;
inline constexpr double kMaxTempo = 0.075;

enum class Style { kCircle, kLine, kFigure8, kCrossover };

/// Throws ConfigError listing the valid names on an unknown style.
Style parse_style(std::string_view name);
std::string style_name(Style s);
const std::vector<std::string>& style_names();

struct SynthOptions {
  std::size_t n_dancers = 3;
  std::size_t length = 120;
  Style style = Style::kCircle;
  double tempo = kDefaultTempo;  // beats per frame
  std::uint64_t seed = 0;
  std::size_t channels = kDefaultChannels;
  double radius = 2.0;   // circle
  double spacing = 1.5;  // line / crossover lanes; figure8 uses twice this
};

struct MotionSample {
  Tensor motion;        // [N x L x d] in scene units
  Tensor music;         // [L x c]
  Tensor contact_mask;  // [N x L], {0, 1}
  std::vector<std::string> channel_names;
  std::pair<std::size_t, std::size_t> position_channels{0, 1};
  std::vector<double> mean;  // per-channel normalization statistics
  std::vector<double> std;
  std::string style;
  double tempo = kDefaultTempo;
  std::uint64_t seed = 0;

  std::size_t n_dancers() const { return motion.dim(0); }
  std::size_t length() const { return motion.dim(1); }
  std::size_t channels() const { return motion.dim(2); }

  friend bool operator==(const MotionSample&, const MotionSample&) = default;
};

/// Generates one sample. Statistics are computed from the sample itself.
MotionSample gen_synthetic(const SynthOptions& opts);

struct Preset {
  std::size_t n_dancers;
  std::size_t length;
};
/// "short" = 3 dancers x 120 frames, "long" = 3 dancers x 400 frames.
Preset preset(std::string_view name);

struct SyntheticDataset {
  std::vector<MotionSample> samples;
  std::uint64_t seed = 0;
};

/// count samples cycling through the four styles; sample i uses seed
/// mix(seed, i). All samples share pooled per-channel statistics.
SyntheticDataset make_dataset(std::size_t n_dancers, std::size_t length, std::size_t count,
                              std::uint64_t seed, double tempo = kDefaultTempo);

/// The dataset used by the toy training run: 3 dancers x 120 frames, 8 samples.
SyntheticDataset default_dataset(std::uint64_t seed = 0);

/// Recomputes pooled per-channel mean/std and stores them in every sample.
void assign_pooled_stats(SyntheticDataset& ds);

Tensor normalize(const Tensor& motion, const std::vector<double>& mean, const std::vector<double>& std);
Tensor denormalize(const Tensor& motion, const std::vector<double>& mean,
                   const std::vector<double>& std);

/// Smallest root distance between any two dancers over all frames
/// (infinity for a single dancer).
double min_pairwise_distance(const Tensor& motion, std::pair<std::size_t, std::size_t> channels = {0, 1});

std::string encode_motion(const MotionSample& s);
MotionSample decode_motion(std::string_view bytes);
void save_motion(const MotionSample& s, const std::filesystem::path& path);
MotionSample load_motion(const std::filesystem::path& path);

/// frame,dancer,channel,value rows.
std::string motion_csv(const MotionSample& s);

}  // namespace stgd::data
