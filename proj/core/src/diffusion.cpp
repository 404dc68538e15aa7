// SPDX-License-Identifier: Apache-2.0
#include "stgd/diffusion.hpp"

#include <cmath>
#include <string>

#include "stgd/rng.hpp"

namespace stgd::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  // Cumulative product in log space.
  double log_bar = 0.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    alpha_[i] = 1.0 - beta_[i];
    log_bar += std::log1p(-beta_[i]);
    alpha_bar_[i] = std::exp(log_bar);
  }
}

double NoiseSchedule::posterior_variance(std::size_t t) const {
  if (t < 1 || t > steps()) throw PreconditionError("posterior_variance: step out of range");
  return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

std::pair<double, double> NoiseSchedule::posterior_mean_coefs(std::size_t t) const {
  if (t < 1 || t > steps()) throw PreconditionError("posterior_mean_coefs: step out of range");
  const double denom = 1.0 - alpha_bar(t);
  return {std::sqrt(alpha_bar(t - 1)) * beta(t) / denom,
          std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / denom};
}

void NoiseSchedule::check_invariants() const {
  if (beta_.empty()) throw ConfigError("schedule has no steps");
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
      throw ConfigError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
    }
    const double prev = i == 0 ? 1.0 : alpha_bar_[i - 1];
    if (!(alpha_bar_[i] < prev)) {
      throw ConfigError("alpha_bar not strictly decreasing at step " + std::to_string(i + 1));
    }
  }
  if (!(alpha_bar_.back() > 0.0 && alpha_bar_.back() < 1.0)) {
    throw ConfigError("alpha_bar_T outside (0, 1)");
  }
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  NoiseSchedule s(std::move(betas));
  s.check_invariants();
  return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& noise, const NoiseSchedule& s) {
  if (t > s.steps()) {
    throw PreconditionError("q_sample: step " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.steps()) + "]");
  }
  if (noise.shape() != x0.shape()) throw DimensionError("q_sample: noise shape differs from x0");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

Tensor p_sample_step(const Tensor& x_t, std::size_t t, const Tensor& x0_hat, const NoiseSchedule& s,
                     std::uint64_t rng_seed, double sigma_scale) {
  if (t < 1 || t > s.steps()) {
    throw PreconditionError("p_sample_step: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.steps()) + "]");
  }
  if (x0_hat.shape() != x_t.shape()) throw DimensionError("p_sample_step: x0_hat shape differs");
  const auto [c0, ct] = s.posterior_mean_coefs(t);
  Tensor out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i];
  if (t > 1 && sigma_scale != 0.0) {
    const double sigma = sigma_scale * std::sqrt(s.posterior_variance(t));
    Rng rng(rng_seed);
    for (double& v : out.data()) v += sigma * rng.normal();
  }
  return out;
}

Tensor generate(const Denoiser& denoise, const Shape& shape, const NoiseSchedule& s,
                std::uint64_t seed) {
  Rng init(mix_seed(seed, 0));
  Tensor x = init.normal_tensor(shape);
  for (std::size_t t = s.steps(); t >= 1; --t) {
    Tensor x0_hat;
    try {
      x0_hat = denoise(x, t);
    } catch (const NumericError& e) {
      throw NumericError("sampling step t=" + std::to_string(t) + ": " + e.what());
    }
    x = p_sample_step(x, t, x0_hat, s, mix_seed(seed, t));
  }
  return x;
}

Tensor generate(const Tensor& music, std::size_t n_dancers, std::size_t length,
                const model::DenoiserState& state, const model::DenoiserConfig& cfg,
                const NoiseSchedule& s, std::uint64_t seed) {
  if (n_dancers == 0 || length == 0) throw ConfigError("generate: empty output requested");
  if (music.rank() != 2 || music.dim(0) != length) {
    throw DimensionError("generate: music must have " + std::to_string(length) + " frames");
  }
  auto net = [&](const Tensor& x_t, std::size_t t) {
    return model::forward(x_t, music, t, state, cfg);
  };
  return generate(net, Shape{n_dancers, length, cfg.d_in}, s, seed);
}

void LossWeights::validate(const Shape& shape) const {
  if (lambda_pos < 0.0 || lambda_vel < 0.0 || lambda_contact < 0.0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (shape.size() != 3) throw DimensionError("loss: motion must be [N x L x d]");
  if (position_channels.first >= shape[2] || position_channels.second >= shape[2]) {
    throw DimensionError("loss: position channel out of range");
  }
  for (std::size_t c : contact_channels) {
    if (c >= shape[2]) throw DimensionError("loss: contact channel out of range");
  }
  if (!contact_mask.empty() && contact_mask.shape() != Shape{shape[0], shape[1]}) {
    throw DimensionError("loss: contact mask must be [N x L]");
  }
}

namespace {

std::size_t contact_terms(const LossWeights& w, std::size_t n_dancers, std::size_t len) {
  if (w.contact_mask.empty() || w.contact_channels.empty()) return 0;
  std::size_t frames = 0;
  for (std::size_t n = 0; n < n_dancers; ++n)
    for (std::size_t l = 0; l + 1 < len; ++l)
      if (w.contact_mask.at(n, l) != 0.0) ++frames;
  return frames * w.contact_channels.size();
}

}  // namespace

LossParts loss(const Tensor& x0, const Tensor& x0_hat, const LossWeights& w) {
  if (x0.shape() != x0_hat.shape()) {
    throw DimensionError("loss: shapes differ " + shape_string(x0.shape()) + " vs " +
                         shape_string(x0_hat.shape()));
  }
  w.validate(x0.shape());
  const std::size_t n_dancers = x0.dim(0), len = x0.dim(1), d = x0.dim(2);
  const auto [px, py] = w.position_channels;

  LossParts parts;
  double s_simple = 0.0, s_pos = 0.0, s_vel = 0.0, s_contact = 0.0;
  for (std::size_t n = 0; n < n_dancers; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < d; ++c) {
        const double r = x0_hat.at(n, l, c) - x0.at(n, l, c);
        s_simple += r * r;
        if (c == px || c == py) s_pos += r * r;
        if (l + 1 < len) {
          const double rv = (x0_hat.at(n, l + 1, c) - x0_hat.at(n, l, c)) -
                            (x0.at(n, l + 1, c) - x0.at(n, l, c));
          s_vel += rv * rv;
        }
      }
      if (l + 1 < len && !w.contact_mask.empty() && w.contact_mask.at(n, l) != 0.0) {
        for (std::size_t c : w.contact_channels) {
          const double v = x0_hat.at(n, l + 1, c) - x0_hat.at(n, l, c);
          s_contact += v * v;
        }
      }
    }
  }
  parts.simple = s_simple / static_cast<double>(n_dancers * len * d);
  parts.pos = s_pos / static_cast<double>(n_dancers * len * 2);
  parts.vel = len > 1 ? s_vel / static_cast<double>(n_dancers * (len - 1) * d) : 0.0;
  const std::size_t nc = contact_terms(w, n_dancers, len);
  parts.contact = nc ? s_contact / static_cast<double>(nc) : 0.0;
  parts.total = parts.simple + w.lambda_pos * parts.pos + w.lambda_vel * parts.vel +
                w.lambda_contact * parts.contact;
  return parts;
}

Tensor loss_backward(const Tensor& x0, const Tensor& x0_hat, const LossWeights& w) {
  if (x0.shape() != x0_hat.shape()) throw DimensionError("loss_backward: shapes differ");
  w.validate(x0.shape());
  const std::size_t n_dancers = x0.dim(0), len = x0.dim(1), d = x0.dim(2);
  const auto [px, py] = w.position_channels;
  const double k_simple = 2.0 / static_cast<double>(n_dancers * len * d);
  const double k_pos = 2.0 * w.lambda_pos / static_cast<double>(n_dancers * len * 2);
  const double k_vel =
      len > 1 ? 2.0 * w.lambda_vel / static_cast<double>(n_dancers * (len - 1) * d) : 0.0;
  const std::size_t nc = contact_terms(w, n_dancers, len);
  const double k_contact = nc ? 2.0 * w.lambda_contact / static_cast<double>(nc) : 0.0;

  Tensor g(x0.shape());
  for (std::size_t n = 0; n < n_dancers; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < d; ++c) {
        const double r = x0_hat.at(n, l, c) - x0.at(n, l, c);
        g.at(n, l, c) += k_simple * r;
        if (c == px || c == py) g.at(n, l, c) += k_pos * r;
        if (l + 1 < len) {
          const double rv = (x0_hat.at(n, l + 1, c) - x0_hat.at(n, l, c)) -
                            (x0.at(n, l + 1, c) - x0.at(n, l, c));
          g.at(n, l + 1, c) += k_vel * rv;
          g.at(n, l, c) -= k_vel * rv;
        }
      }
      if (nc && l + 1 < len && w.contact_mask.at(n, l) != 0.0) {
        for (std::size_t c : w.contact_channels) {
          const double v = x0_hat.at(n, l + 1, c) - x0_hat.at(n, l, c);
          g.at(n, l + 1, c) += k_contact * v;
          g.at(n, l, c) -= k_contact * v;
        }
      }
    }
  }
  return g;
}

}  // namespace stgd::diffusion
