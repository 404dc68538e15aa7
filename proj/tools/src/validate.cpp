// SPDX-License-Identifier: Apache-2.0
// Invariant suite for `stgd validate`. The reference evaluations here are
// written independently of the library kernels.
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stgd/cli.hpp"
#include "stgd/diffusion.hpp"
#include "stgd/errors.hpp"
#include "stgd/grad_check.hpp"
#include "stgd/io.hpp"
#include "stgd/metrics.hpp"
#include "stgd/rng.hpp"
#include "stgd/spatial_graph.hpp"
#include "stgd/temporal_attention.hpp"
#include "stgd/training.hpp"

namespace stgd::cli {

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

Matrix project(const Matrix& x, const Matrix& w, std::size_t col0, std::size_t cols) {
  Matrix out(x.size(), std::vector<double>(cols, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t k = 0; k < w.size(); ++k) out[i][c] += x[i][k] * w[k][col0 + c];
  return out;
}

Matrix softmax_attention(const Matrix& q, const Matrix& k, double scale) {
  const std::size_t len = q.size();
  Matrix a(len, std::vector<double>(len));
  for (std::size_t i = 0; i < len; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) s += q[i][c] * k[j][c];
      a[i][j] = s * scale;
      mx = std::max(mx, a[i][j]);
    }
    double z = 0.0;
    for (double& v : a[i]) z += (v = std::exp(v - mx));
    for (double& v : a[i]) v /= z;
  }
  return a;
}

double diff_attention_error(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 8, heads = 2, len = 5 + seed % 11;
  attn::DiffAttnParams p;
  p.heads = heads;
  p.w_q = rng.normal_tensor({d, 2 * d}, 0.4);
  p.w_k = rng.normal_tensor({d, 2 * d}, 0.4);
  p.w_v = rng.normal_tensor({d, 2 * d}, 0.4);
  p.lambda = rng.uniform_tensor({heads}, 0.0, 1.0);
  const Tensor x = rng.normal_tensor({len, d});
  const Tensor got = attn::diff_attention(x, p);

  const Matrix xm = to_matrix(x), wq = to_matrix(p.w_q), wk = to_matrix(p.w_k), wv = to_matrix(p.w_v);
  const std::size_t hd = d / heads, vd = 2 * d / heads;
  double err = 0.0;
  for (std::size_t h = 0; h < heads; ++h) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Matrix a1 = softmax_attention(project(xm, wq, h * hd, hd), project(xm, wk, h * hd, hd), scale);
    const Matrix a2 =
        softmax_attention(project(xm, wq, d + h * hd, hd), project(xm, wk, d + h * hd, hd), scale);
    const Matrix v = project(xm, wv, h * vd, vd);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t c = 0; c < vd; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += (a1[i][j] - p.lambda[h] * a2[i][j]) * v[j][c];
        err = std::max(err, std::abs(s - got.at(i, h * vd + c)));
      }
  }
  return err;
}

double ldt_error(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 6, len = 9 + seed % 20, window = 1 + seed % 7;
  attn::LdtParams p;
  p.window = window;
  p.w_q = rng.normal_tensor({d, d}, 0.5);
  p.w_k = rng.normal_tensor({d, d}, 0.5);
  p.w_v = rng.normal_tensor({d, d}, 0.5);
  const Tensor x = rng.normal_tensor({len, d});
  const Tensor got = attn::ldt_attention(x, p);
  const Matrix xm = to_matrix(x);
  const Matrix q = project(xm, to_matrix(p.w_q), 0, d), k = project(xm, to_matrix(p.w_k), 0, d),
               v = project(xm, to_matrix(p.w_v), 0, d);
  double err = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t w0 = i / window * window, w1 = std::min(len, w0 + window);
    std::vector<double> num(d, 0.0);
    double den = p.guard;
    for (std::size_t j = w0; j < w1; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += std::max(q[i][c], 0.0) * std::max(k[j][c], 0.0);
      den += s;
      for (std::size_t c = 0; c < d; ++c) num[c] += s * v[j][c];
    }
    for (std::size_t c = 0; c < d; ++c) err = std::max(err, std::abs(num[c] / den - got.at(i, c)));
  }
  return err;
}

double lambda_zero_error(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 4, len = 3 + seed % 9;
  attn::DiffAttnParams p;
  p.heads = 1;
  p.w_q = rng.normal_tensor({d, 2 * d}, 0.5);
  p.w_k = rng.normal_tensor({d, 2 * d}, 0.5);
  p.w_v = rng.normal_tensor({d, 2 * d}, 0.5);
  p.lambda = Tensor({1}, 0.0);
  const Tensor x = rng.normal_tensor({len, d});
  const Tensor full = attn::full_attention(x, slice_cols(p.w_q, 0, d), slice_cols(p.w_k, 0, d), p.w_v);
  return max_abs_diff(attn::diff_attention(x, p), full);
}

/// Largest |eigenvalue| of a symmetric matrix by cyclic Jacobi rotations.
double spectral_radius(Matrix a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) r = std::max(r, std::abs(a[i][i]));
  return r;
}

std::string fmt(double v) { return io::format_double(v); }

template <typename F>
void check(std::vector<CheckLine>& out, const std::string& name, F&& body) {
  CheckLine line;
  line.name = name;
  try {
    body(line);
  } catch (const std::exception& e) {
    line.passed = false;
    line.detail = std::string("threw: ") + e.what();
  }
  out.push_back(std::move(line));
}

}  // namespace

std::vector<CheckLine> run_validation(const ValidateOptions& opts) {
  std::vector<CheckLine> out;
  const std::uint64_t seed = opts.seed;

  check(out, "oracle/diff_attention", [&](CheckLine& l) {
    double err = 0.0;
    for (std::uint64_t i = 0; i < 10; ++i) err = std::max(err, diff_attention_error(mix_seed(seed, i)));
    l.passed = err <= 1e-10;
    l.detail = "max abs error " + fmt(err);
  });
  check(out, "oracle/ldt_attention", [&](CheckLine& l) {
    double err = 0.0;
    for (std::uint64_t i = 0; i < 10; ++i) err = std::max(err, ldt_error(mix_seed(seed, 100 + i)));
    l.passed = err <= 1e-10;
    l.detail = "max abs error " + fmt(err);
  });
  check(out, "oracle/lambda_zero_reduction", [&](CheckLine& l) {
    double err = 0.0;
    for (std::uint64_t i = 0; i < 10; ++i) err = std::max(err, lambda_zero_error(mix_seed(seed, 200 + i)));
    l.passed = err <= 1e-12;
    l.detail = "max abs error " + fmt(err);
  });

  check(out, "gradcheck/coverage", [&](CheckLine& l) {
    const auto missing = gradcheck::uncovered_blocks();
    l.passed = missing.empty();
    std::string names;
    for (const auto& b : gradcheck::learnable_blocks()) names += (names.empty() ? "" : ",") + b;
    l.detail = "learnable blocks: " + names;
    for (const auto& b : missing) l.detail += "; missing " + b;
  });
  gradcheck::Options go;
  go.seed = seed;
  go.perturb_block = opts.perturb_block;
  for (const auto& [block, fn] : gradcheck::registry()) {
    check(out, "gradcheck/" + block, [&, fn = fn](CheckLine& l) {
      const auto r = fn(go);
      l.passed = r.passed;
      l.detail = "max rel error " + fmt(r.max_rel_error);
    });
  }

  for (std::size_t steps : {10, 50, 1000}) {
    check(out, "schedule/T=" + std::to_string(steps), [&](CheckLine& l) {
      diffusion::make_schedule(steps, 1e-4, 0.02).check_invariants();
      const auto s = train::default_schedule(steps);
      s.check_invariants();
      l.passed = s.alpha_bar(0) == 1.0;
      l.detail = "alpha_bar_T " + fmt(s.alpha_bar(steps));
    });
  }
  check(out, "diffusion/posterior_t1_exact", [&](CheckLine& l) {
    Rng rng(mix_seed(seed, 300));
    const auto s = train::default_schedule(50);
    const Tensor x0 = rng.normal_tensor({2, 6, 4});
    const Tensor x1 = diffusion::q_sample(x0, 1, rng.normal_tensor(x0.shape()), s);
    const double err = max_abs_diff(diffusion::p_sample_step(x1, 1, x0, s, 7), x0);
    l.passed = err <= 1e-12;
    l.detail = "max abs error " + fmt(err);
  });

  check(out, "graph/symmetry_and_spectrum", [&](CheckLine& l) {
    Rng rng(mix_seed(seed, 400));
    double worst_radius = 0.0, worst_asym = 0.0;
    for (int c = 0; c < 40; ++c) {
      const auto n = static_cast<std::size_t>(rng.integer(1, 16));
      const Tensor pos = rng.uniform_tensor({n, 2}, -3.0, 3.0);
      const std::size_t k = c % 2 ? 0 : static_cast<std::size_t>(rng.integer(1, 4));
      const auto g = graph::build_graph(pos, graph::kDefaultEpsilon, k);
      worst_asym = std::max(worst_asym, max_abs_diff(g.normalized, transpose(g.normalized)));
      worst_radius = std::max(worst_radius, spectral_radius(to_matrix(g.normalized)));
    }
    l.passed = worst_asym == 0.0 && worst_radius <= 1.0 + 1e-9;
    l.detail = "max asymmetry " + fmt(worst_asym) + ", max spectral radius " + fmt(worst_radius);
  });
  check(out, "graph/permutation_equivariance", [&](CheckLine& l) {
    Rng rng(mix_seed(seed, 500));
    double err = 0.0;
    for (int c = 0; c < 20; ++c) {
      const auto n = static_cast<std::size_t>(rng.integer(2, 10));
      const auto g = graph::build_graph(rng.uniform_tensor({n, 2}, -3.0, 3.0), graph::kDefaultEpsilon, 0);
      const Tensor h = rng.normal_tensor({n, 5});
      const Tensor w = rng.normal_tensor({5, 4});
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
      Tensor ph({n, 5}), pa({n, n});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c2 = 0; c2 < 5; ++c2) ph.at(i, c2) = h.at(perm[i], c2);
        for (std::size_t j = 0; j < n; ++j) pa.at(i, j) = g.normalized.at(perm[i], perm[j]);
      }
      const Tensor base = graph::gcn_layer(h, g.normalized, w);
      const Tensor moved = graph::gcn_layer(ph, pa, w);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c2 = 0; c2 < 4; ++c2) err = std::max(err, std::abs(moved.at(i, c2) - base.at(perm[i], c2)));
    }
    l.passed = err <= 1e-12;
    l.detail = "max abs error " + fmt(err);
  });

  check(out, "metrics/translation_invariance", [&](CheckLine& l) {
    Rng rng(mix_seed(seed, 600));
    Tensor m = rng.normal_tensor({3, 40, 4});
    Tensor shifted = m;
    const double dx = rng.uniform(-5.0, 5.0), dy = rng.uniform(-5.0, 5.0);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t t = 0; t < 40; ++t) {
        shifted.at(n, t, 0) += dx;
        shifted.at(n, t, 1) += dy;
      }
    const double d_tif = std::abs(metrics::tif(m, 0.5) - metrics::tif(shifted, 0.5));
    const double d_gmc = std::abs(metrics::gmc_proxy(m) - metrics::gmc_proxy(shifted));
    l.passed = d_tif == 0.0 && d_gmc <= 1e-9;
    l.detail = "tif delta " + fmt(d_tif) + ", gmc delta " + fmt(d_gmc);
  });
  return out;
}

}  // namespace stgd::cli
