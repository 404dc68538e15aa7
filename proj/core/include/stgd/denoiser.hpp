// SPDX-License-Identifier: Apache-2.0
//
// Spatial-temporal group-dance denoiser. Given a noisy motion tensor x_t
// [N x L x d_in], music features [L x c] and the diffusion step, predicts the
// clean motion x0_hat with the same shape:
//
//   input projection -> group fusion -> per-frame distance GCN
//     -> per-dancer temporal stack (DiffAttn / LDT layers, alternating)
//     -> output head
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stgd/io.hpp"
#include "stgd/spatial_graph.hpp"
#include "stgd/temporal_attention.hpp"
#include "stgd/tensor.hpp"

namespace stgd::model {

struct DenoiserConfig {
  std::size_t d_in = 8;
  std::size_t d_model = 64;
  std::size_t gcn_layers = 2;
  std::size_t decoder_layers = 4;  // even; DiffAttn, LDT, DiffAttn, LDT, ...
  std::size_t heads = 4;
  std::size_t window = attn::kDefaultWindow;
  std::size_t top_k = 0;  // 0 selects graph::default_top_k(N)
  double epsilon = graph::kDefaultEpsilon;
  std::size_t cond_dim = 9;   // music feature channels
  std::size_t film_dim = 16;  // width of the fused music+timestep conditioning
  std::size_t time_dim = 16;  // sinusoidal timestep embedding width (even)
  std::size_t ff_mult = 2;
  std::size_t max_dancers = 8;  // rows in the dancer identity table
  std::pair<std::size_t, std::size_t> position_channels{0, 1};
  double lambda_init = attn::kDefaultLambda;
  double ldt_guard = attn::kDefaultGuard;

  void validate() const;
  io::KeyValues to_key_values() const;
  /// Unknown keys are rejected.
  static DenoiserConfig from_key_values(const io::KeyValues& kv);

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Tiny config used by gradient checks and fast tests.
DenoiserConfig tiny_config();

enum class LayerKind { kDiffAttn, kLdt };
LayerKind layer_kind(std::size_t layer_index);

struct DenoiserState {
  ParameterStore params;
};

/// Registers every parameter with its initial value. Deterministic in seed.
DenoiserState init_state(const DenoiserConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------- building blocks

/// (x + embed[n]) * mix_w + mix_b for each dancer n. x is [N x L x D].
Tensor group_fusion(const Tensor& x, const Tensor& embed, const Tensor& mix_w, const Tensor& mix_b);

struct GroupFusionGrads {
  Tensor dx, dembed, dmix_w, dmix_b;
};
GroupFusionGrads group_fusion_backward(const Tensor& x, const Tensor& embed, const Tensor& mix_w,
                                       const Tensor& dout);

/// Interleaved [sin(t f0), cos(t f0), sin(t f1), ...] with f_i = 10000^(-i / (dim/2)).
Tensor sinusoidal_embedding(double t, std::size_t dim);
/// sinusoidal_embedding followed by a learned affine projection.
Tensor timestep_embedding(double t, std::size_t dim, const Tensor& w, const Tensor& b);

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> rstd;
};
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  LayerNormCache* cache = nullptr);
struct LayerNormGrads {
  Tensor dx, dgain, dbias;
};
LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& gain,
                                   const Tensor& dout);

struct FeedForwardCache {
  Tensor x, hidden_pre, hidden;
};
/// silu(x w1 + b1) w2 + b2
Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                    const Tensor& b2, FeedForwardCache* cache = nullptr);
struct FeedForwardGrads {
  Tensor dx, dw1, db1, dw2, db2;
};
FeedForwardGrads feed_forward_backward(const FeedForwardCache& cache, const Tensor& w1,
                                       const Tensor& w2, const Tensor& dout);

// ---------------------------------------------------------------- full model

struct ForwardCache;  // opaque; holds every activation backward() needs

struct ForwardCacheHandle {
  ForwardCacheHandle();
  ~ForwardCacheHandle();
  ForwardCacheHandle(ForwardCacheHandle&&) noexcept;
  ForwardCacheHandle& operator=(ForwardCacheHandle&&) noexcept;
  ForwardCache& get() { return *impl; }
  const ForwardCache& get() const { return *impl; }
  std::unique_ptr<ForwardCache> impl;
};

/// x0_hat for x_t [N x L x d_in], music [L x cond_dim] at diffusion step t.
/// Non-finite activations raise NumericError naming the block.
Tensor forward(const Tensor& x_t, const Tensor& music, std::size_t t, const DenoiserState& state,
               const DenoiserConfig& cfg, ForwardCacheHandle* cache = nullptr);

/// Accumulates dLoss/dtheta into state.params grads given dLoss/dx0_hat.
void backward(const ForwardCacheHandle& cache, const Tensor& d_out, const DenoiserConfig& cfg,
              DenoiserState& state);

// ---------------------------------------------------------------- checkpoints

inline constexpr const char* kCheckpointMagic = "STGD-CKPT-1";

struct Checkpoint {
  DenoiserConfig config;
  io::KeyValues meta;  // free-form (step counter, normalization stats, seeds...)
  std::vector<std::pair<std::string, Tensor>> tensors;
};

/// Parameters are stored as "param/<name>"; extra tensors keep their names.
Checkpoint make_checkpoint(const DenoiserConfig& cfg, const DenoiserState& state,
                           io::KeyValues meta = {},
                           std::vector<std::pair<std::string, Tensor>> extra = {});
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds the state for ckpt.config, overwriting every parameter from the
/// checkpoint. Missing or mis-shaped parameters raise ConfigError.
DenoiserState state_from_checkpoint(const Checkpoint& ckpt);
const Tensor* find_tensor(const Checkpoint& ckpt, const std::string& name);

}  // namespace stgd::model
