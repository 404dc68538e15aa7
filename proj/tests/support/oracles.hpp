// SPDX-License-Identifier: Apache-2.0
//
// Reference evaluations used by the unit and acceptance tests. They work on
// nested std::vector matrices with plain loops and share no code with the
// library kernels they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "stgd/tensor.hpp"

namespace stgd::oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.values()[i * t.dim(1) + j];
  return m;
}

inline double max_abs_diff(const Matrix& a, const Tensor& b) {
  double err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      err = std::max(err, std::abs(a[i][j] - b.values()[i * b.dim(1) + j]));
  return err;
}

/// x * w[:, col0 : col0 + cols]
inline Matrix project(const Matrix& x, const Matrix& w, std::size_t col0, std::size_t cols) {
  Matrix out(x.size(), std::vector<double>(cols, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t k = 0; k < w.size(); ++k) out[i][c] += x[i][k] * w[k][col0 + c];
  return out;
}

/// Row-wise softmax(scale * q k^T), computed with log-sum-exp.
inline Matrix attention_weights(const Matrix& q, const Matrix& k, double scale) {
  Matrix a(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) s += q[i][c] * k[j][c];
      a[i][j] = scale * s;
      mx = std::max(mx, a[i][j]);
    }
    double lse = 0.0;
    for (double v : a[i]) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    for (double& v : a[i]) v = std::exp(v - lse);
  }
  return a;
}

inline Matrix full_attention(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  const std::size_t dk = wq[0].size(), dv = wv[0].size();
  const Matrix a = attention_weights(project(x, wq, 0, dk), project(x, wk, 0, dk),
                                     1.0 / std::sqrt(static_cast<double>(dk)));
  const Matrix v = project(x, wv, 0, dv);
  Matrix out(x.size(), std::vector<double>(dv, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      for (std::size_t c = 0; c < dv; ++c) out[i][c] += a[i][j] * v[j][c];
  return out;
}

/// Per head h: (softmax(Q1 K1^T / sqrt(dh)) - lambda_h softmax(Q2 K2^T / sqrt(dh))) V_h,
/// where Q1/K1 are the first d columns of the query/key projection and Q2/K2 the
/// second d, each split into heads of d/heads columns.
inline Matrix diff_attention(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                             const std::vector<double>& lambda) {
  const std::size_t d = wq.size(), heads = lambda.size();
  const std::size_t hd = d / heads, vd = 2 * d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out(x.size(), std::vector<double>(2 * d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix a1 = attention_weights(project(x, wq, h * hd, hd), project(x, wk, h * hd, hd), scale);
    const Matrix a2 =
        attention_weights(project(x, wq, d + h * hd, hd), project(x, wk, d + h * hd, hd), scale);
    const Matrix v = project(x, wv, h * vd, vd);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double w = a1[i][j] - lambda[h] * a2[i][j];
        for (std::size_t c = 0; c < vd; ++c) out[i][h * vd + c] += w * v[j][c];
      }
  }
  return out;
}

/// Quadratic form of windowed ReLU-kernel attention: for row i inside window
/// [w0, w1), out_i = sum_j s_ij v_j / (guard + sum_j s_ij), s_ij = relu(q_i).relu(k_j).
inline Matrix ldt_attention(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                            std::size_t window, double guard) {
  const std::size_t d = wq[0].size(), len = x.size();
  const Matrix q = project(x, wq, 0, d), k = project(x, wk, 0, d), v = project(x, wv, 0, d);
  Matrix out(len, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t w0 = (i / window) * window, w1 = std::min(len, w0 + window);
    double den = guard;
    for (std::size_t j = w0; j < w1; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += std::max(0.0, q[i][c]) * std::max(0.0, k[j][c]);
      den += s;
      for (std::size_t c = 0; c < d; ++c) out[i][c] += s * v[j][c];
    }
    for (double& o : out[i]) o /= den;
  }
  return out;
}

/// Inverse-distance adjacency, union top-k pruning (k == 0 keeps all) and
/// symmetric normalization, all by direct loops.
inline Matrix normalized_adjacency(const Matrix& pos, double eps, std::size_t k) {
  const std::size_t n = pos.size();
  Matrix a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i][j] = 1.0 / (std::hypot(pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]) + eps);
  if (k > 0 && k < n - 1) {
    std::vector<std::vector<bool>> keep(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
      keep[i][i] = true;
      std::vector<std::size_t> order;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t p, std::size_t q) { return a[i][p] > a[i][q]; });
      for (std::size_t r = 0; r < k; ++r) keep[i][order[r]] = keep[order[r]][i] = true;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (!keep[i][j]) a[i][j] = 0.0;
  }
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += a[i][j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] /= std::sqrt(deg[i] * deg[j]);
  return a;
}

/// relu(a h w)
inline Matrix gcn_layer(const Matrix& h, const Matrix& a, const Matrix& w) {
  const std::size_t n = h.size(), din = w.size(), dout = w[0].size();
  Matrix out(n, std::vector<double>(dout, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dout; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t m = 0; m < din; ++m) s += a[i][j] * h[j][m] * w[m][c];
      out[i][c] = std::max(0.0, s);
    }
  return out;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(Matrix a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-32) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a[r][p], arq = a[r][q];
          a[r][p] = c * arp - s * arq;
          a[r][q] = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a[p][r], aqr = a[q][r];
          a[p][r] = c * apr - s * aqr;
          a[q][r] = s * apr + c * aqr;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  return ev;
}

inline double spectral_radius(const Matrix& a) {
  double r = 0.0;
  for (double e : symmetric_eigenvalues(a)) r = std::max(r, std::abs(e));
  return r;
}

/// Frames with some pair closer than delta, over L frames. motion is [N x L x d].
inline double tif(const Tensor& motion, double delta) {
  const std::size_t n = motion.dim(0), len = motion.dim(1);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < len; ++t) {
    bool hit = false;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        const double dx = motion.at(a, t, 0) - motion.at(b, t, 0);
        const double dy = motion.at(a, t, 1) - motion.at(b, t, 1);
        if (std::sqrt(dx * dx + dy * dy) < delta) hit = true;
      }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(len);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace stgd::oracle
