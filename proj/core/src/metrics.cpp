// SPDX-License-Identifier: Apache-2.0
#include "stgd/metrics.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stgd/io.hpp"

namespace stgd::metrics {

namespace {

void require_motion(const Tensor& m, Channels ch, const char* op) {
  if (m.rank() != 3) throw DimensionError(std::string(op) + ": motion must be [N x L x d]");
  if (ch.first >= m.dim(2) || ch.second >= m.dim(2)) {
    throw DimensionError(std::string(op) + ": position channel out of range");
  }
}

double root_distance(const Tensor& m, std::size_t a, std::size_t b, std::size_t l, Channels ch) {
  return std::hypot(m.at(a, l, ch.first) - m.at(b, l, ch.first),
                    m.at(a, l, ch.second) - m.at(b, l, ch.second));
}

}  // namespace

double tif(const Tensor& motion, double delta, Channels ch) {
  require_motion(motion, ch, "tif");
  const std::size_t n = motion.dim(0), len = motion.dim(1);
  if (n < 2) throw MetricError("tif: needs at least two dancers");
  std::size_t hits = 0;
  for (std::size_t l = 0; l < len; ++l) {
    bool hit = false;
    for (std::size_t i = 0; i < n && !hit; ++i)
      for (std::size_t j = i + 1; j < n && !hit; ++j) hit = root_distance(motion, i, j, l, ch) < delta;
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(len);
}

double gmc_proxy(const Tensor& motion, Channels ch) {
  require_motion(motion, ch, "gmc_proxy");
  const std::size_t n = motion.dim(0), len = motion.dim(1);
  if (n < 2) throw MetricError("gmc_proxy: needs at least two dancers");
  if (len < 3) throw MetricError("gmc_proxy: needs at least three frames");

  const std::size_t steps = len - 1;
  std::vector<std::vector<double>> speed(n, std::vector<double>(steps));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < steps; ++l)
      speed[i][l] = std::hypot(motion.at(i, l + 1, ch.first) - motion.at(i, l, ch.first),
                               motion.at(i, l + 1, ch.second) - motion.at(i, l, ch.second));

  std::vector<double> mean(n, 0.0), centered_norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : speed[i]) mean[i] += v;
    mean[i] /= static_cast<double>(steps);
    for (double v : speed[i]) centered_norm[i] += (v - mean[i]) * (v - mean[i]);
    centered_norm[i] = std::sqrt(centered_norm[i]);
  }

  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Speed streams that are constant up to rounding carry no correlation.
      const double tol_i = 1e-12 * (std::abs(mean[i]) + 1.0) * std::sqrt(static_cast<double>(steps));
      const double tol_j = 1e-12 * (std::abs(mean[j]) + 1.0) * std::sqrt(static_cast<double>(steps));
      if (centered_norm[i] <= tol_i || centered_norm[j] <= tol_j) continue;
      double cov = 0.0;
      for (std::size_t l = 0; l < steps; ++l) cov += (speed[i][l] - mean[i]) * (speed[j][l] - mean[j]);
      double r = cov / (centered_norm[i] * centered_norm[j]);
      r = std::max(-1.0, std::min(1.0, r));
      total += r;
      ++pairs;
    }
  }
  if (pairs == 0) throw MetricError("gmc_proxy: every dancer pair has a constant speed profile");
  return total / static_cast<double>(pairs);
}

double diversity(const std::vector<Tensor>& samples, const std::vector<double>& mean,
                 const std::vector<double>& stdev) {
  if (samples.size() < 2) throw MetricError("diversity: needs at least two samples");
  const Shape& shape = samples.front().shape();
  for (const auto& s : samples) {
    if (s.shape() != shape) throw DimensionError("diversity: samples differ in shape");
  }
  const std::size_t d = samples.front().cols();
  if (mean.size() != d || stdev.size() != d) throw DimensionError("diversity: stats width mismatch");

  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < samples.size(); ++a) {
    for (std::size_t b = a + 1; b < samples.size(); ++b) {
      double ss = 0.0;
      for (std::size_t i = 0; i < samples[a].size(); ++i) {
        const double diff = (samples[a][i] - samples[b][i]) / stdev[i % d];
        ss += diff * diff;
      }
      total += std::sqrt(ss);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double diversity(const std::vector<Tensor>& samples) {
  if (samples.size() < 2) throw MetricError("diversity: needs at least two samples");
  const std::size_t d = samples.front().cols();
  std::vector<double> mean(d, 0.0), stdev(d, 0.0);
  std::size_t rows = 0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.size(); ++i) mean[i % d] += s[i];
    rows += s.rows();
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < s.size(); ++i) stdev[i % d] += (s[i] - mean[i % d]) * (s[i] - mean[i % d]);
  for (double& v : stdev) {
    v = std::sqrt(v / static_cast<double>(rows));
    if (!(v > 0.0)) v = 1.0;
  }
  return diversity(samples, mean, stdev);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric_kind"] = "proxy";
  j["tif_proxy"] = tif;
  j["gmc_proxy"] = gmc_proxy ? nlohmann::ordered_json(*gmc_proxy) : nlohmann::ordered_json(nullptr);
  j["diversity_proxy"] =
      diversity ? nlohmann::ordered_json(*diversity) : nlohmann::ordered_json(nullptr);
  j["delta"] = delta;
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricReport r;
  r.tif = j.at("tif_proxy").get<double>();
  if (!j.at("gmc_proxy").is_null()) r.gmc_proxy = j.at("gmc_proxy").get<double>();
  if (!j.at("diversity_proxy").is_null()) r.diversity = j.at("diversity_proxy").get<double>();
  r.delta = j.at("delta").get<double>();
  return r;
}

MetricReport evaluate(const std::vector<Tensor>& samples, double delta, Channels ch) {
  if (samples.empty()) throw MetricError("evaluate: no samples");
  MetricReport r;
  r.delta = delta;
  double tif_sum = 0.0, gmc_sum = 0.0;
  std::size_t gmc_count = 0;
  for (const auto& s : samples) {
    tif_sum += tif(s, delta, ch);
    try {
      gmc_sum += gmc_proxy(s, ch);
      ++gmc_count;
    } catch (const MetricError&) {
    }
  }
  r.tif = tif_sum / static_cast<double>(samples.size());
  if (gmc_count) r.gmc_proxy = gmc_sum / static_cast<double>(gmc_count);
  if (samples.size() >= 2) r.diversity = diversity(samples);
  return r;
}

std::string pair_distance_csv(const Tensor& motion, Channels ch) {
  require_motion(motion, ch, "pair_distance_csv");
  std::ostringstream os;
  os << "frame,dancer_a,dancer_b,distance\n";
  for (std::size_t l = 0; l < motion.dim(1); ++l)
    for (std::size_t i = 0; i < motion.dim(0); ++i)
      for (std::size_t j = i + 1; j < motion.dim(0); ++j)
        os << l << ',' << i << ',' << j << ',' << io::format_double(root_distance(motion, i, j, l, ch))
           << '\n';
  return os.str();
}

}  // namespace stgd::metrics
