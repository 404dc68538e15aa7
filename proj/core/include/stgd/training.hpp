// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stgd/dataset.hpp"
#include "stgd/denoiser.hpp"
#include "stgd/diffusion.hpp"
#include "stgd/tensor.hpp"

namespace stgd::train {

inline constexpr double kPublishedLearningRate = 2e-4;

struct AdamState {
  double lr = kPublishedLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;  // one per parameter, registration order
  std::vector<Tensor> v;

  static AdamState for_params(const ParameterStore& params, double lr = kPublishedLearningRate);
};

/// Bias-corrected Adam update over the store in registration order, then
/// zeroes every gradient. `lr` overrides opt.lr when given. A non-finite
/// gradient raises NumericError naming the parameter (nothing is updated).
void adam_step(ParameterStore& params, AdamState& opt, std::optional<double> lr = std::nullopt);

enum class LrSchedule { kConstant, kStepDecay };

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = kPublishedLearningRate;
  LrSchedule schedule = LrSchedule::kStepDecay;
  std::uint64_t seed = 0;
  double lambda_pos = 1.0;
  double lambda_vel = 1.0;
  double lambda_contact = 1.0;
  std::size_t diffusion_steps = 50;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::size_t checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_path;

  void validate() const;
};

/// Learning rate for a 0-based epoch: constant, or halved after every quarter
/// of the run.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

/// Desk-scale linear schedule: betas scaled by 1000 / T so that alpha_bar_T
/// is near zero for small T as well.
diffusion::NoiseSchedule default_schedule(std::size_t steps);

struct TrainResult {
  model::DenoiserConfig model_config;
  model::DenoiserState state;
  AdamState optimizer;
  std::vector<diffusion::LossParts> curve;  // one entry per epoch (full history)
  std::vector<double> norm_mean, norm_std;
};

/// Called after every epoch with (epoch index, epoch loss).
using EpochCallback = std::function<void(std::size_t, const diffusion::LossParts&)>;

/// Full-batch training: every epoch draws a stratified diffusion step per
/// sample, corrupts the normalized motion, predicts x0, backpropagates the
/// weighted loss and takes one Adam step. Passing `resume` continues from its
/// optimizer step up to cfg.epochs and reproduces the uninterrupted run.
TrainResult train_toy(const data::SyntheticDataset& dataset, const TrainConfig& cfg,
                      const model::DenoiserConfig& model_cfg, const TrainResult* resume = nullptr,
                      const EpochCallback& on_epoch = {});

model::Checkpoint to_checkpoint(const TrainResult& r, const TrainConfig& cfg);
TrainResult from_checkpoint(const model::Checkpoint& ckpt);

/// Mean loss over `window` epochs ending at (and including) `epoch`.
double smoothed_loss(const std::vector<diffusion::LossParts>& curve, std::size_t epoch,
                     std::size_t window);

std::string loss_curve_csv(const std::vector<diffusion::LossParts>& curve);

}  // namespace stgd::train
