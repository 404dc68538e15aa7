// SPDX-License-Identifier: Apache-2.0
//
// Temporal kernels over a single dancer's [L x d] feature sequence:
//   full_attention  - softmax(QK^T / sqrt(dk)) V, the quadratic reference
//   diff_attention  - (A1 - lambda * A2) V with split queries/keys per head
//   ldt_attention   - ReLU-kernel linear attention over local windows
//   film            - frame-wise affine modulation from conditioning
// Each kernel has a hand-written vector-Jacobian product.
#pragma once

#include <cstddef>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::attn {

inline constexpr double kDefaultLambda = 0.5;
inline constexpr double kDefaultGuard = 1e-9;
inline constexpr std::size_t kDefaultWindow = 64;

// ---------------------------------------------------------------- full

struct FullAttnCache {
  Tensor x, q, k, v, probs;
};

/// w_q, w_k: [d x dk]; w_v: [d x dv]. Output [L x dv].
Tensor full_attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v,
                      FullAttnCache* cache = nullptr);

struct FullAttnGrads {
  Tensor dx, dw_q, dw_k, dw_v;
};

FullAttnGrads full_attention_backward(const FullAttnCache& cache, const Tensor& w_q,
                                      const Tensor& w_k, const Tensor& w_v, const Tensor& dout);

// ---------------------------------------------------------------- differential

/// Query/key/value projections are [d x 2d]. Queries and keys split into a
/// first and a second half along the last dimension; each half is further
/// split across heads (d / heads columns per head), values into 2d / heads
/// columns per head. lambda holds one scalar per head.
struct DiffAttnParams {
  Tensor w_q, w_k, w_v;
  Tensor lambda;
  std::size_t heads = 1;

  std::size_t model_dim() const { return w_q.dim(0); }
  std::size_t head_dim() const { return model_dim() / heads; }
  std::size_t value_head_dim() const { return 2 * model_dim() / heads; }
  void validate(std::size_t input_dim) const;
};

struct DiffAttnCache {
  Tensor x, q, k, v;
  std::vector<Tensor> probs1, probs2;  // per head, [L x L]
};

/// Output [L x 2d].
Tensor diff_attention(const Tensor& x, const DiffAttnParams& p, DiffAttnCache* cache = nullptr);

struct DiffAttnGrads {
  Tensor dx, dw_q, dw_k, dw_v, dlambda;
};

DiffAttnGrads diff_attention_backward(const DiffAttnCache& cache, const DiffAttnParams& p,
                                      const Tensor& dout);

// ---------------------------------------------------------------- LDT

struct LdtParams {
  Tensor w_q, w_k, w_v;  // [d x d]
  std::size_t window = kDefaultWindow;
  double guard = kDefaultGuard;

  void validate(std::size_t input_dim) const;
};

struct LdtCache {
  Tensor x, q, k, v;  // pre-activation projections
  Tensor out;
  std::vector<double> denom;  // per row, guard included
};

/// out_i = relu(q_i) S_v / (relu(q_i) . s_k + guard) where S_v and s_k are
/// kernel sums over the non-overlapping window that contains row i.
/// Cost is O(L d^2): the d x d summary is formed before queries touch it.
Tensor ldt_attention(const Tensor& x, const LdtParams& p, LdtCache* cache = nullptr);

struct LdtGrads {
  Tensor dx, dw_q, dw_k, dw_v;
};

LdtGrads ldt_attention_backward(const LdtCache& cache, const LdtParams& p, const Tensor& dout);

// ---------------------------------------------------------------- FiLM

/// (cond * w_gamma + 1) * x + cond * w_beta, frame by frame.
Tensor film(const Tensor& x, const Tensor& cond, const Tensor& w_gamma, const Tensor& w_beta);

struct FilmGrads {
  Tensor dx, dcond, dw_gamma, dw_beta;
};

FilmGrads film_backward(const Tensor& x, const Tensor& cond, const Tensor& w_gamma,
                        const Tensor& w_beta, const Tensor& dout);

}  // namespace stgd::attn
