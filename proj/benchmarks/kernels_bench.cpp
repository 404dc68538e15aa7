// SPDX-License-Identifier: Apache-2.0
//
// Micro benchmarks for the kernels the scaling harness times. Complexity
// estimates come from google-benchmark's own fit over the size ranges.
#include <benchmark/benchmark.h>

#include "stgd/denoiser.hpp"
#include "stgd/rng.hpp"
#include "stgd/spatial_graph.hpp"
#include "stgd/temporal_attention.hpp"

namespace {

using namespace stgd;

constexpr std::size_t kWidth = 64;

void BM_FullAttention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = rng.normal_tensor({len, kWidth});
  const Tensor wq = rng.normal_tensor({kWidth, kWidth}, 0.125), wk = rng.normal_tensor({kWidth, kWidth}, 0.125),
               wv = rng.normal_tensor({kWidth, kWidth}, 0.125);
  for (auto _ : state) benchmark::DoNotOptimize(attn::full_attention(x, wq, wk, wv));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FullAttention)->RangeMultiplier(2)->Range(128, 2048)->Complexity()->Unit(benchmark::kMillisecond);

void BM_LdtAttention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  attn::LdtParams p;
  p.window = 64;
  p.w_q = rng.normal_tensor({kWidth, kWidth}, 0.125);
  p.w_k = rng.normal_tensor({kWidth, kWidth}, 0.125);
  p.w_v = rng.normal_tensor({kWidth, kWidth}, 0.125);
  const Tensor x = rng.normal_tensor({len, kWidth});
  for (auto _ : state) benchmark::DoNotOptimize(attn::ldt_attention(x, p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LdtAttention)->RangeMultiplier(2)->Range(128, 4096)->Complexity()->Unit(benchmark::kMillisecond);

void BM_DiffAttention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  attn::DiffAttnParams p;
  p.heads = 4;
  p.w_q = rng.normal_tensor({kWidth, 2 * kWidth}, 0.125);
  p.w_k = rng.normal_tensor({kWidth, 2 * kWidth}, 0.125);
  p.w_v = rng.normal_tensor({kWidth, 2 * kWidth}, 0.125);
  p.lambda = Tensor({4}, attn::kDefaultLambda);
  const Tensor x = rng.normal_tensor({len, kWidth});
  for (auto _ : state) benchmark::DoNotOptimize(attn::diff_attention(x, p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DiffAttention)->RangeMultiplier(2)->Range(128, 2048)->Complexity()->Unit(benchmark::kMillisecond);

// Graph build + normalization + one propagation, for a single frame.
void BM_GcnFrame(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Tensor pos = rng.uniform_tensor({n, 2}, -4.0, 4.0);
  const Tensor h = rng.normal_tensor({n, 32});
  const Tensor w = rng.normal_tensor({32, 32}, 0.2);
  for (auto _ : state) {
    const graph::DistanceGraph g = graph::build_graph(pos, graph::kDefaultEpsilon);
    benchmark::DoNotOptimize(graph::gcn_layer(h, g.normalized, w));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GcnFrame)->RangeMultiplier(2)->Range(4, 256)->Complexity(benchmark::oNSquared);

void BM_DenoiserForward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const model::DenoiserConfig cfg;
  const model::DenoiserState st = model::init_state(cfg, 5);
  Rng rng(5);
  const Tensor x = rng.normal_tensor({3, len, cfg.d_in});
  const Tensor music = rng.normal_tensor({len, cfg.cond_dim});
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(x, music, 10, st, cfg));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(120)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
