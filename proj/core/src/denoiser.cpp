// SPDX-License-Identifier: Apache-2.0
#include "stgd/denoiser.hpp"

#include <cmath>

#include "stgd/rng.hpp"

namespace stgd::model {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string layer_prefix(std::size_t i) { return "dec." + std::to_string(i) + "."; }
std::string gcn_name(std::size_t i) { return "gcn." + std::to_string(i) + ".w"; }

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return rng.normal_tensor({fan_in, fan_out}, std);
}

// [N x L x D] <-> per-dancer [L x D] and per-frame [N x D] views (copies).
Tensor dancer_slice(const Tensor& x, std::size_t n) {
  const std::size_t len = x.dim(1), d = x.dim(2);
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(n * len * d),
                          x.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * len * d));
  return Tensor({len, d}, std::move(out));
}

void set_dancer(Tensor& x, std::size_t n, const Tensor& seq) {
  const std::size_t block = x.dim(1) * x.dim(2);
  std::copy(seq.data().begin(), seq.data().end(),
            x.data().begin() + static_cast<std::ptrdiff_t>(n * block));
}

Tensor frame_slice(const Tensor& x, std::size_t l) {
  const std::size_t n = x.dim(0), d = x.dim(2);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = x.at(i, l, c);
  return out;
}

void set_frame(Tensor& x, std::size_t l, const Tensor& frame) {
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t c = 0; c < x.dim(2); ++c) x.at(i, l, c) = frame.at(i, c);
}

attn::DiffAttnParams bind_diff(const ParameterStore& ps, const std::string& prefix,
                               const DenoiserConfig& cfg) {
  attn::DiffAttnParams p;
  p.w_q = ps.value(prefix + "attn.w_q");
  p.w_k = ps.value(prefix + "attn.w_k");
  p.w_v = ps.value(prefix + "attn.w_v");
  p.lambda = ps.value(prefix + "attn.lambda");
  p.heads = cfg.heads;
  return p;
}

attn::LdtParams bind_ldt(const ParameterStore& ps, const std::string& prefix,
                         const DenoiserConfig& cfg) {
  attn::LdtParams p;
  p.w_q = ps.value(prefix + "attn.w_q");
  p.w_k = ps.value(prefix + "attn.w_k");
  p.w_v = ps.value(prefix + "attn.w_v");
  p.window = cfg.window;
  p.guard = cfg.ldt_guard;
  return p;
}

std::size_t to_size(const io::KeyValues& kv, const std::string& key) {
  const long long v = io::parse_int(kv.get(key));
  if (v < 0) throw ConfigError("'" + key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

}  // namespace

// ---------------------------------------------------------------- config

void DenoiserConfig::validate() const {
  if (d_in < 2) throw ConfigError("d_in must be >= 2 (two root-position channels)");
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (decoder_layers < 2 || decoder_layers % 2 != 0) {
    throw ConfigError("decoder_layers must be even and >= 2, got " + std::to_string(decoder_layers));
  }
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model=" + std::to_string(d_model) + " must be divisible by heads=" +
                      std::to_string(heads));
  }
  if (window == 0) throw ConfigError("window must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("time_dim must be positive and even");
  if (film_dim == 0 || ff_mult == 0 || max_dancers == 0) {
    throw ConfigError("film_dim, ff_mult and max_dancers must be positive");
  }
  if (position_channels.first >= d_in || position_channels.second >= d_in ||
      position_channels.first == position_channels.second) {
    throw ConfigError("position_channels must be two distinct indices below d_in");
  }
  if (!(ldt_guard > 0.0)) throw ConfigError("ldt_guard must be positive");
}

io::KeyValues DenoiserConfig::to_key_values() const {
  io::KeyValues kv;
  kv.set("d_in", std::to_string(d_in));
  kv.set("d_model", std::to_string(d_model));
  kv.set("gcn_layers", std::to_string(gcn_layers));
  kv.set("decoder_layers", std::to_string(decoder_layers));
  kv.set("heads", std::to_string(heads));
  kv.set("window", std::to_string(window));
  kv.set("top_k", std::to_string(top_k));
  kv.set("epsilon", io::format_double(epsilon));
  kv.set("cond_dim", std::to_string(cond_dim));
  kv.set("film_dim", std::to_string(film_dim));
  kv.set("time_dim", std::to_string(time_dim));
  kv.set("ff_mult", std::to_string(ff_mult));
  kv.set("max_dancers", std::to_string(max_dancers));
  kv.set("position_channels",
         std::to_string(position_channels.first) + "," + std::to_string(position_channels.second));
  kv.set("lambda_init", io::format_double(lambda_init));
  kv.set("ldt_guard", io::format_double(ldt_guard));
  return kv;
}

DenoiserConfig DenoiserConfig::from_key_values(const io::KeyValues& kv) {
  DenoiserConfig cfg;
  for (const auto& [key, value] : kv.entries()) {
    if (key == "d_in") cfg.d_in = to_size(kv, key);
    else if (key == "d_model") cfg.d_model = to_size(kv, key);
    else if (key == "gcn_layers") cfg.gcn_layers = to_size(kv, key);
    else if (key == "decoder_layers") cfg.decoder_layers = to_size(kv, key);
    else if (key == "heads") cfg.heads = to_size(kv, key);
    else if (key == "window") cfg.window = to_size(kv, key);
    else if (key == "top_k") cfg.top_k = to_size(kv, key);
    else if (key == "epsilon") cfg.epsilon = io::parse_double(value);
    else if (key == "cond_dim") cfg.cond_dim = to_size(kv, key);
    else if (key == "film_dim") cfg.film_dim = to_size(kv, key);
    else if (key == "time_dim") cfg.time_dim = to_size(kv, key);
    else if (key == "ff_mult") cfg.ff_mult = to_size(kv, key);
    else if (key == "max_dancers") cfg.max_dancers = to_size(kv, key);
    else if (key == "position_channels") {
      const auto parts = io::split(value, ',');
      if (parts.size() != 2) throw ConfigError("position_channels must be 'i,j'");
      cfg.position_channels = {static_cast<std::size_t>(io::parse_int(parts[0])),
                               static_cast<std::size_t>(io::parse_int(parts[1]))};
    } else if (key == "lambda_init") cfg.lambda_init = io::parse_double(value);
    else if (key == "ldt_guard") cfg.ldt_guard = io::parse_double(value);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.d_in = 4;
  cfg.d_model = 8;
  cfg.gcn_layers = 2;
  cfg.decoder_layers = 2;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.cond_dim = 3;
  cfg.film_dim = 4;
  cfg.time_dim = 4;
  cfg.max_dancers = 4;
  return cfg;
}

LayerKind layer_kind(std::size_t layer_index) {
  return layer_index % 2 == 0 ? LayerKind::kDiffAttn : LayerKind::kLdt;
}

DenoiserState init_state(const DenoiserConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t dm = cfg.d_model;
  DenoiserState s;
  auto& ps = s.params;

  ps.add("in_proj.w", "linear", xavier(rng, cfg.d_in, dm));
  ps.add("in_proj.b", "linear", Tensor({dm}));
  ps.add("group_fusion.embed", "group_fusion", rng.normal_tensor({cfg.max_dancers, dm}, 0.5));
  ps.add("group_fusion.mix.w", "group_fusion", xavier(rng, dm, dm));
  ps.add("group_fusion.mix.b", "group_fusion", Tensor({dm}));
  for (std::size_t i = 0; i < cfg.gcn_layers; ++i) {
    // Slightly above unit gain keeps signal alive through the ReLU.
    ps.add(gcn_name(i), "gcn_layer", xavier(rng, dm, dm) * std::sqrt(2.0));
  }
  ps.add("time.w", "timestep_embedding", xavier(rng, cfg.time_dim, cfg.time_dim));
  ps.add("time.b", "timestep_embedding", Tensor({cfg.time_dim}));
  ps.add("cond.w", "linear", xavier(rng, cfg.cond_dim + cfg.time_dim, cfg.film_dim));
  ps.add("cond.b", "linear", Tensor({cfg.film_dim}));

  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = layer_prefix(i);
    ps.add(p + "norm1.gain", "layer_norm", Tensor({dm}, 1.0));
    ps.add(p + "norm1.bias", "layer_norm", Tensor({dm}));
    if (layer_kind(i) == LayerKind::kDiffAttn) {
      ps.add(p + "attn.w_q", "diff_attention", xavier(rng, dm, 2 * dm));
      ps.add(p + "attn.w_k", "diff_attention", xavier(rng, dm, 2 * dm));
      ps.add(p + "attn.w_v", "diff_attention", xavier(rng, dm, 2 * dm));
      ps.add(p + "attn.lambda", "diff_attention", Tensor({cfg.heads}, cfg.lambda_init));
      ps.add(p + "attn_out.w", "linear", xavier(rng, 2 * dm, dm));
    } else {
      ps.add(p + "attn.w_q", "ldt_attention", xavier(rng, dm, dm));
      ps.add(p + "attn.w_k", "ldt_attention", xavier(rng, dm, dm));
      ps.add(p + "attn.w_v", "ldt_attention", xavier(rng, dm, dm));
      ps.add(p + "attn_out.w", "linear", xavier(rng, dm, dm));
    }
    ps.add(p + "attn_out.b", "linear", Tensor({dm}));
    ps.add(p + "film.w_gamma", "film", xavier(rng, cfg.film_dim, dm));
    ps.add(p + "film.w_beta", "film", xavier(rng, cfg.film_dim, dm));
    ps.add(p + "norm2.gain", "layer_norm", Tensor({dm}, 1.0));
    ps.add(p + "norm2.bias", "layer_norm", Tensor({dm}));
    ps.add(p + "ff.w1", "feed_forward", xavier(rng, dm, cfg.ff_mult * dm));
    ps.add(p + "ff.b1", "feed_forward", Tensor({cfg.ff_mult * dm}));
    ps.add(p + "ff.w2", "feed_forward", xavier(rng, cfg.ff_mult * dm, dm));
    ps.add(p + "ff.b2", "feed_forward", Tensor({dm}));
  }
  ps.add("out.w", "output_head", xavier(rng, dm, cfg.d_in));
  ps.add("out.b", "output_head", Tensor({cfg.d_in}));
  return s;
}

// ---------------------------------------------------------------- blocks

Tensor group_fusion(const Tensor& x, const Tensor& embed, const Tensor& mix_w, const Tensor& mix_b) {
  if (x.rank() != 3 || x.dim(0) == 0) {
    throw DimensionError("group_fusion: expected [N x L x D] input with N >= 1, got " +
                         shape_string(x.shape()));
  }
  if (embed.rank() != 2 || embed.dim(1) != x.dim(2)) {
    throw DimensionError("group_fusion: embedding table " + shape_string(embed.shape()) +
                         " does not match width " + std::to_string(x.dim(2)));
  }
  if (x.dim(0) > embed.dim(0)) {
    throw ConfigError("group_fusion: " + std::to_string(x.dim(0)) +
                      " dancers exceed the identity table size " + std::to_string(embed.dim(0)));
  }
  Tensor z = x;
  const std::size_t len = x.dim(1), d = x.dim(2);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t c = 0; c < d; ++c) z.at(n, l, c) += embed.at(n, c);
  return linear_forward(z, mix_w, mix_b);
}

GroupFusionGrads group_fusion_backward(const Tensor& x, const Tensor& embed, const Tensor& mix_w,
                                       const Tensor& dout) {
  Tensor z = x;
  const std::size_t len = x.dim(1), d = x.dim(2);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t c = 0; c < d; ++c) z.at(n, l, c) += embed.at(n, c);
  GroupFusionGrads g;
  g.dmix_w = Tensor(mix_w.shape());
  g.dmix_b = Tensor({mix_w.dim(1)});
  g.dx = linear_backward(z, dout, mix_w, g.dmix_w, &g.dmix_b);
  g.dembed = Tensor(embed.shape());
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t c = 0; c < d; ++c) g.dembed.at(n, c) += g.dx.at(n, l, c);
  return g;
}

Tensor sinusoidal_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("timestep embedding width must be positive and even, got " +
                      std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

Tensor timestep_embedding(double t, std::size_t dim, const Tensor& w, const Tensor& b) {
  return linear_forward(sinusoidal_embedding(t, dim), w, b);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormCache* cache) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_string(x.shape()));
  }
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mean) * rstd[r];
      xhat[r * d + c] = h;
      y[r * d + c] = h * gain[c] + bias[c];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& gain,
                                   const Tensor& dout) {
  const std::size_t rows = cache.xhat.rows(), d = cache.xhat.cols();
  LayerNormGrads g;
  g.dx = Tensor(cache.xhat.shape());
  g.dgain = Tensor({d});
  g.dbias = Tensor({d});
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double gy = dout[r * d + c];
      const double xh = cache.xhat[r * d + c];
      g.dgain[c] += gy * xh;
      g.dbias[c] += gy;
      dxhat[c] = gy * gain[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xh;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      g.dx[r * d + c] =
          cache.rstd[r] * (dxhat[c] - mean_dxhat - cache.xhat[r * d + c] * mean_dxhat_xhat);
    }
  }
  return g;
}

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                    const Tensor& b2, FeedForwardCache* cache) {
  Tensor pre = linear_forward(x, w1, b1);
  Tensor hidden = silu(pre);
  Tensor out = linear_forward(hidden, w2, b2);
  if (cache) {
    cache->x = x;
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

FeedForwardGrads feed_forward_backward(const FeedForwardCache& cache, const Tensor& w1,
                                       const Tensor& w2, const Tensor& dout) {
  FeedForwardGrads g;
  g.dw1 = Tensor(w1.shape());
  g.db1 = Tensor({w1.dim(1)});
  g.dw2 = Tensor(w2.shape());
  g.db2 = Tensor({w2.dim(1)});
  const Tensor dhidden = linear_backward(cache.hidden, dout, w2, g.dw2, &g.db2);
  const Tensor dpre = silu_backward(cache.hidden_pre, dhidden);
  g.dx = linear_backward(cache.x, dpre, w1, g.dw1, &g.db1);
  return g;
}

// ---------------------------------------------------------------- full model

struct DecoderLayerCache {
  Tensor h_in;
  LayerNormCache norm1;
  Tensor norm1_out;
  attn::DiffAttnCache diff;
  attn::LdtCache ldt;
  Tensor attn_out;
  Tensor proj_out;
  LayerNormCache norm2;
  FeedForwardCache ff;
};

struct ForwardCache {
  Tensor x_t;
  Tensor h0;
  Tensor fused;
  std::vector<Tensor> graphs;                 // per frame
  std::vector<std::vector<Tensor>> gcn_in;    // [frame][layer] -> [N x D]
  Tensor time_sin;
  Tensor time_emb;
  Tensor cond_in;
  Tensor cond;
  std::vector<std::vector<DecoderLayerCache>> layers;  // [dancer][layer]
  Tensor h_final;                                      // [N x L x D]
};

ForwardCacheHandle::ForwardCacheHandle() : impl(std::make_unique<ForwardCache>()) {}
ForwardCacheHandle::~ForwardCacheHandle() = default;
ForwardCacheHandle::ForwardCacheHandle(ForwardCacheHandle&&) noexcept = default;
ForwardCacheHandle& ForwardCacheHandle::operator=(ForwardCacheHandle&&) noexcept = default;

Tensor forward(const Tensor& x_t, const Tensor& music, std::size_t t, const DenoiserState& state,
               const DenoiserConfig& cfg, ForwardCacheHandle* handle) {
  cfg.validate();
  if (x_t.rank() != 3 || x_t.dim(2) != cfg.d_in || x_t.dim(0) == 0 || x_t.dim(1) == 0) {
    throw DimensionError("denoiser: x_t must be [N x L x " + std::to_string(cfg.d_in) + "], got " +
                         shape_string(x_t.shape()));
  }
  const std::size_t n_dancers = x_t.dim(0), len = x_t.dim(1);
  if (music.rank() != 2 || music.dim(0) != len || music.dim(1) != cfg.cond_dim) {
    throw DimensionError("denoiser: music must be [" + std::to_string(len) + " x " +
                         std::to_string(cfg.cond_dim) + "], got " + shape_string(music.shape()));
  }
  require_finite(x_t, "denoiser input x_t");
  require_finite(music, "denoiser music conditioning");

  const auto& ps = state.params;
  ForwardCache* c = handle ? &handle->get() : nullptr;

  Tensor h0 = linear_forward(x_t, ps.value("in_proj.w"), ps.value("in_proj.b"));
  require_finite(h0, "input projection");
  Tensor fused = group_fusion(h0, ps.value("group_fusion.embed"), ps.value("group_fusion.mix.w"),
                              ps.value("group_fusion.mix.b"));
  require_finite(fused, "group fusion");

  // Spatial stage: one distance graph per frame, built from the positions the
  // denoiser currently sees.
  Tensor spatial = fused;
  if (c) {
    c->graphs.assign(len, Tensor());
    c->gcn_in.assign(len, {});
  }
  for (std::size_t l = 0; l < len; ++l) {
    const auto g = graph::build_graph(graph::frame_positions(x_t, l, cfg.position_channels),
                                      cfg.epsilon, cfg.top_k);
    Tensor h = frame_slice(fused, l);
    for (std::size_t j = 0; j < cfg.gcn_layers; ++j) {
      if (c) c->gcn_in[l].push_back(h);
      h = graph::gcn_layer(h, g.normalized, ps.value(gcn_name(j)));
    }
    set_frame(spatial, l, h);
    if (c) c->graphs[l] = g.normalized;
  }
  require_finite(spatial, "spatial GCN");

  // Conditioning: timestep token concatenated to every music frame.
  const Tensor time_sin = sinusoidal_embedding(static_cast<double>(t), cfg.time_dim);
  const Tensor time_emb = linear_forward(time_sin, ps.value("time.w"), ps.value("time.b"));
  Tensor cond_in({len, cfg.cond_dim + cfg.time_dim});
  for (std::size_t l = 0; l < len; ++l) {
    for (std::size_t k = 0; k < cfg.cond_dim; ++k) cond_in.at(l, k) = music.at(l, k);
    for (std::size_t k = 0; k < cfg.time_dim; ++k) cond_in.at(l, cfg.cond_dim + k) = time_emb[k];
  }
  const Tensor cond = linear_forward(cond_in, ps.value("cond.w"), ps.value("cond.b"));
  require_finite(cond, "conditioning projection");

  // Temporal stage, dancer by dancer.
  Tensor h_final({n_dancers, len, cfg.d_model});
  Tensor out({n_dancers, len, cfg.d_in});
  if (c) c->layers.assign(n_dancers, std::vector<DecoderLayerCache>(cfg.decoder_layers));
  for (std::size_t n = 0; n < n_dancers; ++n) {
    Tensor h = dancer_slice(spatial, n);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
      const std::string p = layer_prefix(i);
      DecoderLayerCache local;
      DecoderLayerCache& lc = c ? c->layers[n][i] : local;
      lc.h_in = h;
      lc.norm1_out = layer_norm(h, ps.value(p + "norm1.gain"), ps.value(p + "norm1.bias"), &lc.norm1);
      if (layer_kind(i) == LayerKind::kDiffAttn) {
        lc.attn_out = attn::diff_attention(lc.norm1_out, bind_diff(ps, p, cfg), c ? &lc.diff : nullptr);
      } else {
        lc.attn_out = attn::ldt_attention(lc.norm1_out, bind_ldt(ps, p, cfg), c ? &lc.ldt : nullptr);
      }
      lc.proj_out = linear_forward(lc.attn_out, ps.value(p + "attn_out.w"), ps.value(p + "attn_out.b"));
      h += attn::film(lc.proj_out, cond, ps.value(p + "film.w_gamma"), ps.value(p + "film.w_beta"));
      const Tensor n2 = layer_norm(h, ps.value(p + "norm2.gain"), ps.value(p + "norm2.bias"), &lc.norm2);
      h += feed_forward(n2, ps.value(p + "ff.w1"), ps.value(p + "ff.b1"), ps.value(p + "ff.w2"),
                        ps.value(p + "ff.b2"), &lc.ff);
      require_finite(h, std::string("decoder layer ") + std::to_string(i) +
                            (layer_kind(i) == LayerKind::kDiffAttn ? " (DiffAttn)" : " (LDT)"));
    }
    set_dancer(h_final, n, h);
    set_dancer(out, n, linear_forward(h, ps.value("out.w"), ps.value("out.b")));
  }
  require_finite(out, "output head");

  if (c) {
    c->x_t = x_t;
    c->h0 = std::move(h0);
    c->fused = std::move(fused);
    c->time_sin = time_sin;
    c->time_emb = time_emb;
    c->cond_in = std::move(cond_in);
    c->cond = cond;
    c->h_final = std::move(h_final);
  }
  return out;
}

void backward(const ForwardCacheHandle& handle, const Tensor& d_out, const DenoiserConfig& cfg,
              DenoiserState& state) {
  const ForwardCache& c = handle.get();
  auto& ps = state.params;
  const std::size_t n_dancers = c.x_t.dim(0), len = c.x_t.dim(1);
  if (d_out.shape() != c.x_t.shape()) {
    throw DimensionError("denoiser backward: gradient shape " + shape_string(d_out.shape()) +
                         " does not match output " + shape_string(c.x_t.shape()));
  }

  Tensor d_spatial({n_dancers, len, cfg.d_model});
  Tensor d_cond(c.cond.shape());
  for (std::size_t n = 0; n < n_dancers; ++n) {
    Tensor dh = linear_backward(dancer_slice(c.h_final, n), dancer_slice(d_out, n),
                                ps.value("out.w"), ps.grad("out.w"), &ps.grad("out.b"));
    for (std::size_t ii = cfg.decoder_layers; ii-- > 0;) {
      const std::string p = layer_prefix(ii);
      const DecoderLayerCache& lc = c.layers[n][ii];

      // h2 = h1 + ff(norm2(h1))
      const auto ff = feed_forward_backward(lc.ff, ps.value(p + "ff.w1"), ps.value(p + "ff.w2"), dh);
      ps.grad(p + "ff.w1") += ff.dw1;
      ps.grad(p + "ff.b1") += ff.db1;
      ps.grad(p + "ff.w2") += ff.dw2;
      ps.grad(p + "ff.b2") += ff.db2;
      const auto n2 = layer_norm_backward(lc.norm2, ps.value(p + "norm2.gain"), ff.dx);
      ps.grad(p + "norm2.gain") += n2.dgain;
      ps.grad(p + "norm2.bias") += n2.dbias;
      dh += n2.dx;

      // h1 = h0 + film(attn_out_proj(attn(norm1(h0))), cond)
      const auto fg = attn::film_backward(lc.proj_out, c.cond, ps.value(p + "film.w_gamma"),
                                          ps.value(p + "film.w_beta"), dh);
      ps.grad(p + "film.w_gamma") += fg.dw_gamma;
      ps.grad(p + "film.w_beta") += fg.dw_beta;
      d_cond += fg.dcond;
      const Tensor d_attn = linear_backward(lc.attn_out, fg.dx, ps.value(p + "attn_out.w"),
                                            ps.grad(p + "attn_out.w"), &ps.grad(p + "attn_out.b"));
      Tensor d_norm1;
      if (layer_kind(ii) == LayerKind::kDiffAttn) {
        const auto ag = attn::diff_attention_backward(lc.diff, bind_diff(ps, p, cfg), d_attn);
        ps.grad(p + "attn.w_q") += ag.dw_q;
        ps.grad(p + "attn.w_k") += ag.dw_k;
        ps.grad(p + "attn.w_v") += ag.dw_v;
        ps.grad(p + "attn.lambda") += ag.dlambda;
        d_norm1 = ag.dx;
      } else {
        const auto ag = attn::ldt_attention_backward(lc.ldt, bind_ldt(ps, p, cfg), d_attn);
        ps.grad(p + "attn.w_q") += ag.dw_q;
        ps.grad(p + "attn.w_k") += ag.dw_k;
        ps.grad(p + "attn.w_v") += ag.dw_v;
        d_norm1 = ag.dx;
      }
      const auto n1 = layer_norm_backward(lc.norm1, ps.value(p + "norm1.gain"), d_norm1);
      ps.grad(p + "norm1.gain") += n1.dgain;
      ps.grad(p + "norm1.bias") += n1.dbias;
      dh += n1.dx;
    }
    set_dancer(d_spatial, n, dh);
  }

  // Conditioning path.
  Tensor d_cond_in({len, cfg.cond_dim + cfg.time_dim});
  d_cond_in = linear_backward(c.cond_in, d_cond, ps.value("cond.w"), ps.grad("cond.w"),
                              &ps.grad("cond.b"));
  Tensor d_time_emb({cfg.time_dim});
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t k = 0; k < cfg.time_dim; ++k) d_time_emb[k] += d_cond_in.at(l, cfg.cond_dim + k);
  linear_backward(c.time_sin, d_time_emb, ps.value("time.w"), ps.grad("time.w"), &ps.grad("time.b"));

  // Spatial stage.
  Tensor d_fused({n_dancers, len, cfg.d_model});
  for (std::size_t l = 0; l < len; ++l) {
    Tensor dh = frame_slice(d_spatial, l);
    for (std::size_t j = cfg.gcn_layers; j-- > 0;) {
      const auto gg = graph::gcn_layer_backward(c.gcn_in[l][j], c.graphs[l], ps.value(gcn_name(j)), dh);
      ps.grad(gcn_name(j)) += gg.dw;
      dh = gg.dh;
    }
    set_frame(d_fused, l, dh);
  }

  const auto gf = group_fusion_backward(c.h0, ps.value("group_fusion.embed"),
                                        ps.value("group_fusion.mix.w"), d_fused);
  ps.grad("group_fusion.mix.w") += gf.dmix_w;
  ps.grad("group_fusion.mix.b") += gf.dmix_b;
  ps.grad("group_fusion.embed") += gf.dembed;
  linear_backward(c.x_t, gf.dx, ps.value("in_proj.w"), ps.grad("in_proj.w"), &ps.grad("in_proj.b"));
}

// ---------------------------------------------------------------- checkpoints

Checkpoint make_checkpoint(const DenoiserConfig& cfg, const DenoiserState& state, io::KeyValues meta,
                           std::vector<std::pair<std::string, Tensor>> extra) {
  Checkpoint ck;
  ck.config = cfg;
  ck.meta = std::move(meta);
  for (const auto& p : state.params.params()) ck.tensors.emplace_back("param/" + p.name, p.value);
  for (auto& e : extra) ck.tensors.push_back(std::move(e));
  return ck;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  std::string header = std::string(kCheckpointMagic) + "\n[config]\n" +
                       ckpt.config.to_key_values().to_text() + "[meta]\n" + ckpt.meta.to_text() + "\n";
  w.put_bytes(header);
  w.put_u64(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.put_u32(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put_u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put_u64(d);
    w.put_f64s(t.data());
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.get_line() != kCheckpointMagic) throw FormatError("not a STGD-CKPT-1 checkpoint", 0);
  if (r.get_line() != "[config]") throw FormatError("expected [config] section", r.offset());
  std::string config_text, meta_text;
  std::string line;
  while ((line = r.get_line()) != "[meta]") config_text += line + "\n";
  while (!(line = r.get_line()).empty()) meta_text += line + "\n";

  Checkpoint ck;
  try {
    ck.config = DenoiserConfig::from_key_values(io::KeyValues::parse(config_text));
    ck.meta = io::KeyValues::parse(meta_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), r.offset());
  }
  const std::uint64_t count = r.get_u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.get_u32();
    std::string name = r.get_bytes(name_len);
    const std::size_t at = r.offset();
    const std::uint32_t rank = r.get_u32();
    if (rank > 8) throw FormatError("implausible tensor rank for '" + name + "'", at);
    Shape shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = r.get_u64();
      total *= d;
    }
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), r.get_f64s(total)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

const Tensor* find_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& [n, t] : ckpt.tensors)
    if (n == name) return &t;
  return nullptr;
}

DenoiserState state_from_checkpoint(const Checkpoint& ckpt) {
  DenoiserState s = init_state(ckpt.config, 0);
  for (auto& p : s.params.params()) {
    const Tensor* t = find_tensor(ckpt, "param/" + p.name);
    if (!t) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (t->shape() != p.value.shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " +
                        shape_string(t->shape()) + ", config expects " +
                        shape_string(p.value.shape()));
    }
    p.value = *t;
  }
  return s;
}

}  // namespace stgd::model
