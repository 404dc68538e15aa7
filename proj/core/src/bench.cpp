// SPDX-License-Identifier: Apache-2.0
#include "stgd/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "stgd/errors.hpp"
#include "stgd/io.hpp"
#include "stgd/rng.hpp"
#include "stgd/spatial_graph.hpp"
#include "stgd/temporal_attention.hpp"

namespace stgd::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Points whose median is below this many timer ticks are not trusted.
constexpr double kMinTicks = 100.0;

void require_grid(const std::vector<std::size_t>& sizes, const char* op) {
  if (sizes.size() < 4) throw PreconditionError(std::string(op) + ": need at least 4 grid points");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw PreconditionError(std::string(op) + ": grid sizes must be positive");
    if (i && sizes[i] <= sizes[i - 1]) {
      throw PreconditionError(std::string(op) + ": grid must be strictly increasing");
    }
  }
}

void require_options(const Options& o) {
  if (o.repetitions < kMinRepetitions) {
    throw PreconditionError("bench: repetitions must be at least " + std::to_string(kMinRepetitions));
  }
}

std::uint64_t hash_tensor(const Tensor& t) {
  io::ByteWriter w;
  w.put_f64s(t.data());
  return io::fnv1a(w.bytes());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchPoint measure(std::size_t size, const std::function<Tensor()>& run, const Options& o) {
  BenchPoint p;
  p.size = size;
  for (std::size_t i = 0; i < o.warmup; ++i) p.checksum = hash_tensor(run());
  for (std::size_t r = 0; r < o.repetitions; ++r) {
    const auto t0 = Clock::now();
    const Tensor out = run();
    const auto t1 = Clock::now();
    p.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    if (r == 0 && o.warmup == 0) p.checksum = hash_tensor(out);
  }
  p.median_seconds = median(p.samples);
  return p;
}

void finish(BenchResult& r, std::vector<BenchPoint> points) {
  const double floor = kMinTicks * timer_resolution();
  for (auto& p : points) {
    if (!(p.median_seconds > floor)) {
      r.dropped.push_back(p.size);
      r.warnings.push_back(r.kernel + ": size " + std::to_string(p.size) +
                           " dropped, median below timer resolution");
      continue;
    }
    r.points.push_back(std::move(p));
  }
  if (r.points.size() < 3) {
    throw BenchError(r.kernel + ": fewer than 3 grid points survived timing");
  }
  std::vector<double> xs, ys;
  for (const auto& p : r.points) {
    xs.push_back(static_cast<double>(p.size));
    ys.push_back(p.median_seconds);
  }
  r.fit = fit_loglog(xs, ys);
}

}  // namespace

Fit fit_loglog(const std::vector<double>& sizes, const std::vector<double>& times) {
  if (sizes.size() != times.size()) throw DimensionError("fit_loglog: size/time count mismatch");
  if (sizes.size() < 3) throw BenchError("fit_loglog: need at least 3 points");
  const double n = static_cast<double>(sizes.size());
  double sx = 0.0, sy = 0.0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0) || !(times[i] > 0.0)) throw BenchError("fit_loglog: values must be positive");
    lx.push_back(std::log(sizes[i]));
    ly.push_back(std::log(times[i]));
    sx += lx.back();
    sy += ly.back();
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw BenchError("fit_loglog: sizes must not all be equal");
  Fit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

std::uint64_t gcn_flops(std::size_t n, std::size_t length, std::size_t d) {
  return static_cast<std::uint64_t>(length) * (n * n * d + n * d * d);
}

std::uint64_t attention_flops(const std::string& kernel, std::size_t len, std::size_t d) {
  const std::uint64_t l = len;
  if (kernel == "full") return 3 * l * d * d + 2 * l * l * d;
  if (kernel == "ldt") return 3 * l * d * d + l * (2 * d * d + 2 * d);
  if (kernel == "diff") return 6 * l * d * d + 4 * l * l * d;
  throw ConfigError("unknown kernel '" + kernel + "' (valid: full,ldt,diff,gcn)");
}

std::vector<BenchResult> bench_attention(const std::vector<std::size_t>& lengths, std::size_t d,
                                         std::size_t window, const Options& opts,
                                         const std::vector<std::string>& kernels) {
  require_single_threaded();
  require_grid(lengths, "bench_attention");
  require_options(opts);
  if (d == 0 || window == 0) throw PreconditionError("bench_attention: d and window must be positive");

  std::vector<BenchResult> results;
  for (const auto& kernel : kernels) {
    attention_flops(kernel, 1, 1);  // validates the name
    Rng rng(mix_seed(opts.seed, io::fnv1a(kernel)));
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    BenchResult r;
    r.kernel = kernel;
    std::vector<BenchPoint> points;
    for (std::size_t len : lengths) {
      const Tensor x = rng.normal_tensor({len, d});
      std::function<Tensor()> run;
      if (kernel == "full") {
        auto wq = rng.normal_tensor({d, d}, ws), wk = rng.normal_tensor({d, d}, ws),
             wv = rng.normal_tensor({d, d}, ws);
        run = [x, wq, wk, wv] { return attn::full_attention(x, wq, wk, wv); };
      } else if (kernel == "ldt") {
        attn::LdtParams p;
        p.window = window;
        p.w_q = rng.normal_tensor({d, d}, ws);
        p.w_k = rng.normal_tensor({d, d}, ws);
        p.w_v = rng.normal_tensor({d, d}, ws);
        run = [x, p] { return attn::ldt_attention(x, p); };
      } else {
        attn::DiffAttnParams p;
        p.heads = d % 4 == 0 ? 4 : 1;
        p.w_q = rng.normal_tensor({d, 2 * d}, ws);
        p.w_k = rng.normal_tensor({d, 2 * d}, ws);
        p.w_v = rng.normal_tensor({d, 2 * d}, ws);
        p.lambda = Tensor({p.heads}, attn::kDefaultLambda);
        run = [x, p] { return attn::diff_attention(x, p); };
      }
      BenchPoint pt = measure(len, run, opts);
      pt.flops = attention_flops(kernel, len, d);
      points.push_back(std::move(pt));
    }
    finish(r, std::move(points));
    results.push_back(std::move(r));
  }
  return results;
}

BenchResult bench_gcn(const std::vector<std::size_t>& dancer_counts, std::size_t length, std::size_t d,
                      const Options& opts) {
  require_single_threaded();
  require_grid(dancer_counts, "bench_gcn");
  require_options(opts);
  if (length == 0 || d == 0) throw PreconditionError("bench_gcn: length and d must be positive");

  Rng rng(mix_seed(opts.seed, io::fnv1a("gcn")));
  BenchResult r;
  r.kernel = "gcn";
  std::vector<BenchPoint> points;
  for (std::size_t n : dancer_counts) {
    std::vector<Tensor> positions, features;
    for (std::size_t l = 0; l < length; ++l) {
      positions.push_back(rng.uniform_tensor({n, 2}, -4.0, 4.0));
      features.push_back(rng.normal_tensor({n, d}));
    }
    const Tensor w = rng.normal_tensor({d, d}, std::sqrt(2.0 / static_cast<double>(d)));
    auto run = [&positions, &features, &w, n, d, length] {
      Tensor acc({n, d});
      for (std::size_t l = 0; l < length; ++l) {
        const auto g = graph::build_graph(positions[l], graph::kDefaultEpsilon, 0);
        acc += graph::gcn_layer(features[l], g.normalized, w);
      }
      return acc;
    };
    BenchPoint pt = measure(n, run, opts);
    pt.flops = gcn_flops(n, length, d);
    points.push_back(std::move(pt));
  }
  finish(r, std::move(points));
  return r;
}

FlopEstimate flop_estimate(const model::DenoiserConfig& cfg, std::size_t n_dancers, std::size_t length) {
  cfg.validate();
  const std::uint64_t n = n_dancers, l = length, dm = cfg.d_model, din = cfg.d_in;
  const std::uint64_t ffw = cfg.ff_mult * dm;
  FlopEstimate f;
  f.gcn_quadratic = l * cfg.gcn_layers * n * n * dm;
  f.spatial = f.gcn_quadratic + l * cfg.gcn_layers * n * dm * dm;

  f.other = n * l * din * dm            // input projection
            + n * l * dm * dm           // group fusion mix
            + cfg.time_dim * cfg.time_dim  // timestep embedding
            + l * (cfg.cond_dim + cfg.time_dim) * cfg.film_dim
            + n * l * dm * din;         // output head

  std::uint64_t per_dancer = 0;
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    if (model::layer_kind(i) == model::LayerKind::kDiffAttn) {
      per_dancer += 6 * l * dm * dm + 4 * l * l * dm + l * 2 * dm * dm;
    } else {
      const std::uint64_t ldt = l * (2 * dm * dm + 2 * dm);
      f.ldt_term += n * ldt;
      per_dancer += 3 * l * dm * dm + ldt + l * dm * dm;
    }
    per_dancer += 2 * l * cfg.film_dim * dm + 2 * l * dm * ffw;
  }
  f.temporal = n * per_dancer;
  f.full_attention_reference = n * cfg.decoder_layers * 2 * l * l * dm;
  return f;
}

double timer_resolution() {
  static const double res = [] {
    double best = 1.0;
    for (int i = 0; i < 200; ++i) {
      const auto t0 = Clock::now();
      auto t1 = Clock::now();
      while (t1 == t0) t1 = Clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  }();
  return res;
}

void require_single_threaded() {
#if defined(_OPENMP) || defined(STGD_PARALLEL)
  throw BenchError("bench: built with internal parallelism; timings would not be comparable");
#endif
}

std::string to_csv(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << "kernel,size,median_seconds,flops_estimate\n";
  for (const auto& r : results)
    for (const auto& p : r.points)
      os << r.kernel << ',' << p.size << ',' << io::format_double(p.median_seconds) << ',' << p.flops
         << '\n';
  os << "\n# summary\nkernel,slope,r2,points,dropped\n";
  for (const auto& r : results) {
    os << r.kernel << ',' << io::format_double(r.fit.slope) << ',' << io::format_double(r.fit.r2) << ','
       << r.points.size() << ',' << r.dropped.size() << '\n';
  }
  os << "\n# samples\nkernel,size,repetition,seconds\n";
  for (const auto& r : results)
    for (const auto& p : r.points)
      for (std::size_t i = 0; i < p.samples.size(); ++i)
        os << r.kernel << ',' << p.size << ',' << i << ',' << io::format_double(p.samples[i]) << '\n';
  return os.str();
}

std::string deterministic_summary(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << "kernel,size,flops_estimate,output_checksum\n";
  for (const auto& r : results)
    for (const auto& p : r.points) os << r.kernel << ',' << p.size << ',' << p.flops << ',' << io::hex64(p.checksum) << '\n';
  return os.str();
}

}  // namespace stgd::bench
