// SPDX-License-Identifier: Apache-2.0
#include "stgd/training.hpp"

#include <cmath>
#include <sstream>

#include "stgd/errors.hpp"
#include "stgd/io.hpp"
#include "stgd/rng.hpp"

namespace stgd::train {

namespace {

constexpr std::uint64_t kInitStream = 0x1157;
constexpr std::uint64_t kEpochStream = 0xE90C;

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += io::format_double(v[i]);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : io::split(s, ',')) out.push_back(io::parse_double(part));
  return out;
}

void clip_gradients(ParameterStore& params, double max_norm) {
  double ss = 0.0;
  for (const auto& p : params.params())
    for (double g : p.grad.data()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params.params()) p.grad *= scale;
  }
}

}  // namespace

AdamState AdamState::for_params(const ParameterStore& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params.params()) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adam_step(ParameterStore& params, AdamState& opt, std::optional<double> lr) {
  auto& ps = params.params();
  if (opt.m.size() != ps.size() || opt.v.size() != ps.size()) {
    throw PreconditionError("adam_step: optimizer state does not match the parameter store");
  }
  for (const auto& p : ps) {
    if (!all_finite(p.grad)) throw NumericError("adam_step: non-finite gradient in " + p.name);
  }
  const double rate = lr.value_or(opt.lr);
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (opt.m[i].shape() != p.value.shape()) {
      throw PreconditionError("adam_step: moment shape mismatch for " + p.name);
    }
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = opt.m[i].data();
    auto v = opt.v[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * grad[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * grad[j] * grad[j];
      value[j] -= rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt.eps);
    }
    p.zero_grad();
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (diffusion_steps < 2) throw ConfigError("train: diffusion_steps must be at least 2");
  if (lambda_pos < 0.0 || lambda_vel < 0.0 || lambda_contact < 0.0) {
    throw ConfigError("train: loss weights must be non-negative");
  }
  if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be non-negative");
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.schedule == LrSchedule::kConstant) return cfg.lr;
  const std::size_t quarter = std::max<std::size_t>(1, cfg.epochs / 4);
  const std::size_t drops = std::min<std::size_t>(3, epoch / quarter);
  return cfg.lr * std::pow(0.5, static_cast<double>(drops));
}

diffusion::NoiseSchedule default_schedule(std::size_t steps) {
  if (steps < 2) throw ConfigError("default_schedule: need at least 2 steps");
  const double scale = 1000.0 / static_cast<double>(steps);
  const double start = std::min(1e-4 * scale, 0.5);
  const double end = std::min(0.02 * scale, 0.999);
  return diffusion::make_schedule(steps, start, end);
}

TrainResult train_toy(const data::SyntheticDataset& dataset, const TrainConfig& cfg,
                      const model::DenoiserConfig& model_cfg, const TrainResult* resume,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("train: empty dataset");
  const auto& first = dataset.samples.front();
  if (first.channels() != model_cfg.d_in) {
    throw ConfigError("train: dataset has " + std::to_string(first.channels()) +
                      " channels, model expects d_in=" + std::to_string(model_cfg.d_in));
  }
  if (first.music.dim(1) != model_cfg.cond_dim) {
    throw ConfigError("train: music width does not match cond_dim");
  }

  TrainResult r;
  if (resume) {
    if (!(resume->model_config == model_cfg)) throw ConfigError("train: resume config mismatch");
    r = *resume;
  } else {
    r.model_config = model_cfg;
    r.state = model::init_state(model_cfg, mix_seed(cfg.seed, kInitStream));
    r.optimizer = AdamState::for_params(r.state.params, cfg.lr);
    r.norm_mean = first.mean;
    r.norm_std = first.std;
  }

  const auto schedule = default_schedule(cfg.diffusion_steps);
  const std::size_t batch = dataset.samples.size();
  std::vector<Tensor> x0s;
  std::vector<diffusion::LossWeights> weights;
  for (const auto& s : dataset.samples) {
    x0s.push_back(data::normalize(s.motion, r.norm_mean, r.norm_std));
    diffusion::LossWeights w;
    w.lambda_pos = cfg.lambda_pos;
    w.lambda_vel = cfg.lambda_vel;
    w.lambda_contact = cfg.lambda_contact;
    w.position_channels = model_cfg.position_channels;
    w.contact_mask = s.contact_mask;
    w.validate(s.motion.shape());
    weights.push_back(std::move(w));
  }

  const auto start = static_cast<std::size_t>(r.optimizer.step);
  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, kEpochStream + epoch));
    r.state.params.zero_grad();
    diffusion::LossParts epoch_loss;
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      // Stratified step: sample i draws from the i-th of `batch` equal bins.
      const double u = (static_cast<double>(i) + rng.uniform()) * inv_b;
      const auto t = std::min<std::size_t>(
          cfg.diffusion_steps, 1 + static_cast<std::size_t>(u * static_cast<double>(cfg.diffusion_steps)));
      const Tensor noise = rng.normal_tensor(x0s[i].shape());
      const Tensor x_t = diffusion::q_sample(x0s[i], t, noise, schedule);
      model::ForwardCacheHandle cache;
      Tensor x0_hat;
      try {
        x0_hat = model::forward(x_t, dataset.samples[i].music, t, r.state, model_cfg, &cache);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what(), epoch + 1);
      }
      const auto parts = diffusion::loss(x0s[i], x0_hat, weights[i]);
      if (!std::isfinite(parts.total)) {
        throw DivergenceError("training diverged: non-finite loss", epoch + 1);
      }
      epoch_loss.total += parts.total * inv_b;
      epoch_loss.simple += parts.simple * inv_b;
      epoch_loss.pos += parts.pos * inv_b;
      epoch_loss.vel += parts.vel * inv_b;
      epoch_loss.contact += parts.contact * inv_b;
      Tensor d_out = diffusion::loss_backward(x0s[i], x0_hat, weights[i]);
      d_out *= inv_b;
      model::backward(cache, d_out, model_cfg, r.state);
    }
    if (cfg.clip_norm > 0.0) clip_gradients(r.state.params, cfg.clip_norm);
    try {
      adam_step(r.state.params, r.optimizer, learning_rate(cfg, epoch));
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(), epoch + 1);
    }
    r.curve.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (cfg.checkpoint_every && !cfg.checkpoint_path.empty() && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      model::save_checkpoint(cfg.checkpoint_path, to_checkpoint(r, cfg));
    }
  }
  return r;
}

model::Checkpoint to_checkpoint(const TrainResult& r, const TrainConfig& cfg) {
  io::KeyValues meta;
  meta.set("step", std::to_string(r.optimizer.step));
  meta.set("adam.lr", io::format_double(r.optimizer.lr));
  meta.set("adam.beta1", io::format_double(r.optimizer.beta1));
  meta.set("adam.beta2", io::format_double(r.optimizer.beta2));
  meta.set("adam.eps", io::format_double(r.optimizer.eps));
  meta.set("train.seed", std::to_string(cfg.seed));
  meta.set("train.epochs", std::to_string(cfg.epochs));
  meta.set("diffusion_steps", std::to_string(cfg.diffusion_steps));
  meta.set("norm_mean", join_doubles(r.norm_mean));
  meta.set("norm_std", join_doubles(r.norm_std));

  std::vector<std::pair<std::string, Tensor>> extra;
  const auto& ps = r.state.params.params();
  for (std::size_t i = 0; i < ps.size() && i < r.optimizer.m.size(); ++i) {
    extra.emplace_back("adam.m/" + ps[i].name, r.optimizer.m[i]);
    extra.emplace_back("adam.v/" + ps[i].name, r.optimizer.v[i]);
  }
  Tensor curve({r.curve.size(), 5});
  for (std::size_t e = 0; e < r.curve.size(); ++e) {
    const auto& c = r.curve[e];
    curve.at(e, 0) = c.total;
    curve.at(e, 1) = c.simple;
    curve.at(e, 2) = c.pos;
    curve.at(e, 3) = c.vel;
    curve.at(e, 4) = c.contact;
  }
  extra.emplace_back("train.curve", std::move(curve));
  return model::make_checkpoint(r.model_config, r.state, std::move(meta), std::move(extra));
}

TrainResult from_checkpoint(const model::Checkpoint& ckpt) {
  TrainResult r;
  r.model_config = ckpt.config;
  r.state = model::state_from_checkpoint(ckpt);
  const auto& meta = ckpt.meta;
  for (const char* key : {"step", "adam.lr", "norm_mean", "norm_std"}) {
    if (!meta.has(key)) throw ConfigError(std::string("checkpoint: missing meta key ") + key);
  }
  r.optimizer.step = static_cast<long>(io::parse_int(meta.get("step")));
  r.optimizer.lr = io::parse_double(meta.get("adam.lr"));
  if (meta.has("adam.beta1")) r.optimizer.beta1 = io::parse_double(meta.get("adam.beta1"));
  if (meta.has("adam.beta2")) r.optimizer.beta2 = io::parse_double(meta.get("adam.beta2"));
  if (meta.has("adam.eps")) r.optimizer.eps = io::parse_double(meta.get("adam.eps"));
  r.norm_mean = split_doubles(meta.get("norm_mean"));
  r.norm_std = split_doubles(meta.get("norm_std"));
  if (r.norm_mean.size() != r.model_config.d_in || r.norm_std.size() != r.model_config.d_in) {
    throw ConfigError("checkpoint: normalization stats do not match d_in");
  }
  for (const auto& p : r.state.params.params()) {
    const Tensor* m = model::find_tensor(ckpt, "adam.m/" + p.name);
    const Tensor* v = model::find_tensor(ckpt, "adam.v/" + p.name);
    if (!m || !v) {
      if (r.optimizer.step != 0) throw ConfigError("checkpoint: missing optimizer moments for " + p.name);
      r.optimizer.m.emplace_back(p.value.shape());
      r.optimizer.v.emplace_back(p.value.shape());
      continue;
    }
    if (m->shape() != p.value.shape() || v->shape() != p.value.shape()) {
      throw ConfigError("checkpoint: optimizer moment shape mismatch for " + p.name);
    }
    r.optimizer.m.push_back(*m);
    r.optimizer.v.push_back(*v);
  }
  if (const Tensor* curve = model::find_tensor(ckpt, "train.curve")) {
    if (curve->rank() != 2 || (curve->size() && curve->dim(1) != 5)) {
      throw ConfigError("checkpoint: malformed loss curve");
    }
    for (std::size_t e = 0; e < curve->dim(0); ++e) {
      r.curve.push_back({curve->at(e, 0), curve->at(e, 1), curve->at(e, 2), curve->at(e, 3),
                         curve->at(e, 4)});
    }
  }
  return r;
}

double smoothed_loss(const std::vector<diffusion::LossParts>& curve, std::size_t epoch,
                     std::size_t window) {
  if (window == 0 || epoch >= curve.size() || epoch + 1 < window) {
    throw PreconditionError("smoothed_loss: window out of range");
  }
  double s = 0.0;
  for (std::size_t e = epoch + 1 - window; e <= epoch; ++e) s += curve[e].total;
  return s / static_cast<double>(window);
}

std::string loss_curve_csv(const std::vector<diffusion::LossParts>& curve) {
  std::ostringstream os;
  os << "epoch,total,simple,pos,vel,contact\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    const auto& c = curve[e];
    os << e << ',' << io::format_double(c.total) << ',' << io::format_double(c.simple) << ','
       << io::format_double(c.pos) << ',' << io::format_double(c.vel) << ','
       << io::format_double(c.contact) << '\n';
  }
  return os.str();
}

}  // namespace stgd::train
