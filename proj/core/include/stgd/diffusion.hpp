// SPDX-License-Identifier: Apache-2.0
//
// DDPM machinery in the x0-prediction parameterization: linear beta schedule,
// closed-form forward corruption, posterior reverse step, the sampling loop
// and the four-term reconstruction loss.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "stgd/denoiser.hpp"
#include "stgd/tensor.hpp"

namespace stgd::diffusion {

/// Steps are 1-based: beta(1) .. beta(T). alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas);

  std::size_t steps() const noexcept { return beta_.size(); }
  double beta(std::size_t t) const { return beta_.at(t - 1); }
  double alpha(std::size_t t) const { return alpha_.at(t - 1); }
  double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(t - 1); }
  /// Posterior variance beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(std::size_t t) const;
  /// Coefficients (c_x0, c_xt) of the posterior mean c_x0 * x0 + c_xt * x_t.
  std::pair<double, double> posterior_mean_coefs(std::size_t t) const;

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  /// Throws ConfigError when beta leaves (0, 1) or alpha_bar is not strictly decreasing.
  void check_invariants() const;

 private:
  std::vector<double> beta_, alpha_, alpha_bar_;
};

/// Linear interpolation from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& noise, const NoiseSchedule& s);

/// Draws x_{t-1} from the Gaussian posterior around x0_hat. At t = 1 no noise
/// is added. sigma_scale multiplies the posterior standard deviation (0 gives
/// the deterministic mean path).
Tensor p_sample_step(const Tensor& x_t, std::size_t t, const Tensor& x0_hat, const NoiseSchedule& s,
                     std::uint64_t rng_seed, double sigma_scale = 1.0);

/// Any x0 predictor: (x_t, t) -> x0_hat.
using Denoiser = std::function<Tensor(const Tensor& x_t, std::size_t t)>;

/// x_T ~ N(0, I); for t = T..1: x_{t-1} = p_sample_step(x_t, t, denoise(x_t, t)).
Tensor generate(const Denoiser& denoise, const Shape& shape, const NoiseSchedule& s,
                std::uint64_t seed);

/// Network-backed sampler. Returns an [n_dancers x length x d_in] tensor.
Tensor generate(const Tensor& music, std::size_t n_dancers, std::size_t length,
                const model::DenoiserState& state, const model::DenoiserConfig& cfg,
                const NoiseSchedule& s, std::uint64_t seed);

struct LossWeights {
  double lambda_pos = 1.0;
  double lambda_vel = 1.0;
  double lambda_contact = 1.0;
  std::pair<std::size_t, std::size_t> position_channels{0, 1};
  std::vector<std::size_t> contact_channels;
  Tensor contact_mask;  // [N x L] of {0, 1}; empty means no contact frames

  void validate(const Shape& motion_shape) const;
};

struct LossParts {
  double total = 0.0;
  double simple = 0.0;
  double pos = 0.0;
  double vel = 0.0;
  double contact = 0.0;
};

LossParts loss(const Tensor& x0, const Tensor& x0_hat, const LossWeights& w);
/// dTotal/dx0_hat.
Tensor loss_backward(const Tensor& x0, const Tensor& x0_hat, const LossWeights& w);

}  // namespace stgd::diffusion
