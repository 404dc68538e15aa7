// SPDX-License-Identifier: Apache-2.0
#include "stgd/temporal_attention.hpp"

#include <algorithm>
#include <cmath>

namespace stgd::attn {

namespace {

void require_sequence(const Tensor& x, std::size_t d, const char* op) {
  if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) != d) {
    throw DimensionError(std::string(op) + ": expected [L x " + std::to_string(d) +
                         "] input with L >= 1, got " + shape_string(x.shape()));
  }
}

void require_weight(const Tensor& w, std::size_t rows, const char* op, const char* name) {
  if (w.rank() != 2 || w.dim(0) != rows) {
    throw DimensionError(std::string(op) + ": " + name + " must have " + std::to_string(rows) +
                         " rows, got " + shape_string(w.shape()));
  }
}

/// softmax((q k^T) * scale)
Tensor attention_probs(const Tensor& q, const Tensor& k, double scale) {
  Tensor logits = matmul_nt(q, k);
  logits *= scale;
  return softmax_rows(logits);
}

}  // namespace

// ---------------------------------------------------------------- full

Tensor full_attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v,
                      FullAttnCache* cache) {
  if (x.rank() != 2) throw DimensionError("full_attention: expected [L x d] input");
  require_sequence(x, x.dim(1), "full_attention");
  require_weight(w_q, x.dim(1), "full_attention", "w_q");
  require_weight(w_k, x.dim(1), "full_attention", "w_k");
  require_weight(w_v, x.dim(1), "full_attention", "w_v");
  if (w_k.dim(1) != w_q.dim(1)) throw DimensionError("full_attention: w_q and w_k widths differ");

  Tensor q = matmul(x, w_q);
  Tensor k = matmul(x, w_k);
  Tensor v = matmul(x, w_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w_q.dim(1)));
  Tensor probs = attention_probs(q, k, scale);
  Tensor out = matmul(probs, v);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
  }
  return out;
}

FullAttnGrads full_attention_backward(const FullAttnCache& c, const Tensor& w_q, const Tensor& w_k,
                                      const Tensor& w_v, const Tensor& dout) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(w_q.dim(1)));
  const Tensor dv = matmul_tn(c.probs, dout);
  Tensor dlogits = softmax_rows_backward(c.probs, matmul_nt(dout, c.v));
  dlogits *= scale;
  const Tensor dq = matmul(dlogits, c.k);
  const Tensor dk = matmul_tn(dlogits, c.q);

  FullAttnGrads g;
  g.dw_q = matmul_tn(c.x, dq);
  g.dw_k = matmul_tn(c.x, dk);
  g.dw_v = matmul_tn(c.x, dv);
  g.dx = matmul_nt(dq, w_q);
  g.dx += matmul_nt(dk, w_k);
  g.dx += matmul_nt(dv, w_v);
  return g;
}

// ---------------------------------------------------------------- differential

void DiffAttnParams::validate(std::size_t input_dim) const {
  const char* op = "diff_attention";
  if (heads == 0) throw ConfigError("diff_attention: heads must be positive");
  const std::size_t d = input_dim;
  for (const Tensor* w : {&w_q, &w_k, &w_v}) {
    if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != 2 * d) {
      throw DimensionError(std::string(op) + ": projections must be [" + std::to_string(d) + " x " +
                           std::to_string(2 * d) + "], got " + shape_string(w->shape()));
    }
  }
  if (d % heads != 0) {
    throw ConfigError("diff_attention: model width " + std::to_string(d) +
                      " is not divisible by heads=" + std::to_string(heads));
  }
  if (lambda.size() != heads) {
    throw DimensionError("diff_attention: lambda must hold one value per head");
  }
  require_finite(lambda, "diff_attention lambda");
}

Tensor diff_attention(const Tensor& x, const DiffAttnParams& p, DiffAttnCache* cache) {
  if (x.rank() != 2) throw DimensionError("diff_attention: expected [L x d] input");
  p.validate(x.dim(1));
  require_sequence(x, p.model_dim(), "diff_attention");

  const std::size_t d = p.model_dim();
  const std::size_t hd = p.head_dim();
  const std::size_t vd = p.value_head_dim();
  const std::size_t len = x.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor q = matmul(x, p.w_q);
  Tensor k = matmul(x, p.w_k);
  Tensor v = matmul(x, p.w_v);
  Tensor out({len, 2 * d});

  if (cache) {
    cache->probs1.clear();
    cache->probs2.clear();
  }
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor a1 = attention_probs(slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd), scale);
    const Tensor a2 =
        attention_probs(slice_cols(q, d + h * hd, hd), slice_cols(k, d + h * hd, hd), scale);
    Tensor mixed = a1;
    mixed -= a2 * p.lambda[h];
    add_cols(out, matmul(mixed, slice_cols(v, h * vd, vd)), h * vd);
    if (cache) {
      cache->probs1.push_back(a1);
      cache->probs2.push_back(a2);
    }
  }
  require_finite(out, "diff_attention output");
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
  }
  return out;
}

DiffAttnGrads diff_attention_backward(const DiffAttnCache& c, const DiffAttnParams& p,
                                      const Tensor& dout) {
  const std::size_t d = p.model_dim();
  const std::size_t hd = p.head_dim();
  const std::size_t vd = p.value_head_dim();
  const std::size_t len = c.x.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor dq({len, 2 * d}), dk({len, 2 * d}), dv({len, 2 * d});
  DiffAttnGrads g;
  g.dlambda = Tensor(p.lambda.shape());

  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor& a1 = c.probs1[h];
    const Tensor& a2 = c.probs2[h];
    const double lam = p.lambda[h];
    const Tensor dout_h = slice_cols(dout, h * vd, vd);
    const Tensor v_h = slice_cols(c.v, h * vd, vd);

    Tensor mixed = a1;
    mixed -= a2 * lam;
    add_cols(dv, matmul_tn(mixed, dout_h), h * vd);

    const Tensor dmixed = matmul_nt(dout_h, v_h);
    g.dlambda[h] = -dot(dmixed, a2);

    Tensor dl1 = softmax_rows_backward(a1, dmixed);
    Tensor dl2 = softmax_rows_backward(a2, dmixed * (-lam));
    dl1 *= scale;
    dl2 *= scale;

    const Tensor q1 = slice_cols(c.q, h * hd, hd), k1 = slice_cols(c.k, h * hd, hd);
    const Tensor q2 = slice_cols(c.q, d + h * hd, hd), k2 = slice_cols(c.k, d + h * hd, hd);
    add_cols(dq, matmul(dl1, k1), h * hd);
    add_cols(dk, matmul_tn(dl1, q1), h * hd);
    add_cols(dq, matmul(dl2, k2), d + h * hd);
    add_cols(dk, matmul_tn(dl2, q2), d + h * hd);
  }

  g.dw_q = matmul_tn(c.x, dq);
  g.dw_k = matmul_tn(c.x, dk);
  g.dw_v = matmul_tn(c.x, dv);
  g.dx = matmul_nt(dq, p.w_q);
  g.dx += matmul_nt(dk, p.w_k);
  g.dx += matmul_nt(dv, p.w_v);
  return g;
}

// ---------------------------------------------------------------- LDT

void LdtParams::validate(std::size_t input_dim) const {
  if (window < 1) throw ConfigError("ldt_attention: window must be >= 1");
  if (!(guard > 0.0)) throw ConfigError("ldt_attention: guard must be positive");
  for (const Tensor* w : {&w_q, &w_k, &w_v}) {
    if (w->rank() != 2 || w->dim(0) != input_dim || w->dim(1) != input_dim) {
      throw DimensionError("ldt_attention: projections must be [" + std::to_string(input_dim) +
                           " x " + std::to_string(input_dim) + "], got " +
                           shape_string(w->shape()));
    }
  }
}

Tensor ldt_attention(const Tensor& x, const LdtParams& p, LdtCache* cache) {
  if (x.rank() != 2) throw DimensionError("ldt_attention: expected [L x d] input");
  p.validate(x.dim(1));
  require_sequence(x, x.dim(1), "ldt_attention");

  const std::size_t len = x.dim(0);
  const std::size_t d = x.dim(1);
  Tensor q = matmul(x, p.w_q);
  Tensor k = matmul(x, p.w_k);
  Tensor v = matmul(x, p.w_v);
  Tensor out({len, d});
  std::vector<double> denom(len);

  std::vector<double> sv(d * d);
  std::vector<double> sk(d);
  std::vector<double> qr(d);
  for (std::size_t start = 0; start < len; start += p.window) {
    const std::size_t stop = std::min(len, start + p.window);
    std::fill(sv.begin(), sv.end(), 0.0);
    std::fill(sk.begin(), sk.end(), 0.0);
    for (std::size_t j = start; j < stop; ++j) {
      const auto kj = k.row(j);
      const auto vj = v.row(j);
      for (std::size_t a = 0; a < d; ++a) {
        const double kr = kj[a] > 0.0 ? kj[a] : 0.0;
        sk[a] += kr;
        double* sva = sv.data() + a * d;
        for (std::size_t b = 0; b < d; ++b) sva[b] += kr * vj[b];
      }
    }
    for (std::size_t i = start; i < stop; ++i) {
      const auto qi = q.row(i);
      auto oi = out.row(i);
      double den = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        qr[a] = qi[a] > 0.0 ? qi[a] : 0.0;
        den += qr[a] * sk[a];
      }
      den += p.guard;
      for (std::size_t a = 0; a < d; ++a) {
        const double qa = qr[a];
        const double* sva = sv.data() + a * d;
        for (std::size_t b = 0; b < d; ++b) oi[b] += qa * sva[b];
      }
      for (std::size_t b = 0; b < d; ++b) oi[b] /= den;
      denom[i] = den;
    }
  }
  mac::add(static_cast<std::uint64_t>(len) * (2 * d * d + 2 * d));
  require_finite(out, "ldt_attention output");

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->out = out;
    cache->denom = std::move(denom);
  }
  return out;
}

LdtGrads ldt_attention_backward(const LdtCache& c, const LdtParams& p, const Tensor& dout) {
  const std::size_t len = c.x.dim(0);
  const std::size_t d = c.x.dim(1);
  Tensor dq({len, d}), dk({len, d}), dv({len, d});

  std::vector<double> sv(d * d), sk(d), dsv(d * d), dsk(d), qr(d), dnum(d);
  for (std::size_t start = 0; start < len; start += p.window) {
    const std::size_t stop = std::min(len, start + p.window);
    std::fill(sv.begin(), sv.end(), 0.0);
    std::fill(sk.begin(), sk.end(), 0.0);
    std::fill(dsv.begin(), dsv.end(), 0.0);
    std::fill(dsk.begin(), dsk.end(), 0.0);
    for (std::size_t j = start; j < stop; ++j) {
      const auto kj = c.k.row(j);
      const auto vj = c.v.row(j);
      for (std::size_t a = 0; a < d; ++a) {
        const double kr = kj[a] > 0.0 ? kj[a] : 0.0;
        sk[a] += kr;
        for (std::size_t b = 0; b < d; ++b) sv[a * d + b] += kr * vj[b];
      }
    }
    for (std::size_t i = start; i < stop; ++i) {
      const auto qi = c.q.row(i);
      const auto oi = c.out.row(i);
      const auto gi = dout.row(i);
      const double den = c.denom[i];
      double dden = 0.0;
      for (std::size_t b = 0; b < d; ++b) {
        dnum[b] = gi[b] / den;
        dden -= gi[b] * oi[b] / den;
      }
      auto dqi = dq.row(i);
      for (std::size_t a = 0; a < d; ++a) {
        qr[a] = qi[a] > 0.0 ? qi[a] : 0.0;
        if (!(qi[a] > 0.0)) continue;
        double acc = dden * sk[a];
        for (std::size_t b = 0; b < d; ++b) acc += dnum[b] * sv[a * d + b];
        dqi[a] = acc;
      }
      for (std::size_t a = 0; a < d; ++a) {
        if (qr[a] == 0.0) continue;
        dsk[a] += dden * qr[a];
        for (std::size_t b = 0; b < d; ++b) dsv[a * d + b] += qr[a] * dnum[b];
      }
    }
    for (std::size_t j = start; j < stop; ++j) {
      const auto kj = c.k.row(j);
      const auto vj = c.v.row(j);
      auto dkj = dk.row(j);
      auto dvj = dv.row(j);
      for (std::size_t a = 0; a < d; ++a) {
        if (!(kj[a] > 0.0)) continue;
        double acc = dsk[a];
        for (std::size_t b = 0; b < d; ++b) {
          acc += dsv[a * d + b] * vj[b];
          dvj[b] += dsv[a * d + b] * kj[a];
        }
        dkj[a] = acc;
      }
    }
  }

  LdtGrads g;
  g.dw_q = matmul_tn(c.x, dq);
  g.dw_k = matmul_tn(c.x, dk);
  g.dw_v = matmul_tn(c.x, dv);
  g.dx = matmul_nt(dq, p.w_q);
  g.dx += matmul_nt(dk, p.w_k);
  g.dx += matmul_nt(dv, p.w_v);
  return g;
}

// ---------------------------------------------------------------- FiLM

Tensor film(const Tensor& x, const Tensor& cond, const Tensor& w_gamma, const Tensor& w_beta) {
  if (x.rank() != 2 || cond.rank() != 2 || cond.dim(0) != x.dim(0) ||
      w_gamma.rank() != 2 || w_gamma.dim(0) != cond.dim(1) || w_gamma.dim(1) != x.dim(1) ||
      w_beta.shape() != w_gamma.shape()) {
    throw DimensionError("film: x " + shape_string(x.shape()) + ", cond " +
                         shape_string(cond.shape()) + ", w_gamma " +
                         shape_string(w_gamma.shape()) + ", w_beta " +
                         shape_string(w_beta.shape()) + " do not agree");
  }
  Tensor out = matmul(cond, w_beta);
  const Tensor gamma = matmul(cond, w_gamma);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += (gamma[i] + 1.0) * x[i];
  return out;
}

FilmGrads film_backward(const Tensor& x, const Tensor& cond, const Tensor& w_gamma,
                        const Tensor& w_beta, const Tensor& dout) {
  const Tensor gamma = matmul(cond, w_gamma);
  Tensor dgamma = hadamard(dout, x);
  FilmGrads g;
  g.dx = dout;
  for (std::size_t i = 0; i < g.dx.size(); ++i) g.dx[i] *= gamma[i] + 1.0;
  g.dw_gamma = matmul_tn(cond, dgamma);
  g.dw_beta = matmul_tn(cond, dout);
  g.dcond = matmul_nt(dgamma, w_gamma);
  g.dcond += matmul_nt(dout, w_beta);
  return g;
}

}  // namespace stgd::attn
