// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "preq/kernels.hpp"

using namespace preq::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void BM_gemm(benchmark::State& state, Exec exec) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_buffer(static_cast<std::size_t>(n) * n, 1);
  const auto b = random_buffer(static_cast<std::size_t>(n) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    gemm_nn(exec, n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_attention(benchmark::State& state, Exec exec) {
  AttentionShape s;
  s.n_query = s.n_key = static_cast<int>(state.range(0));
  s.n_heads = 4;
  s.head_dim = 16;
  const std::size_t width = static_cast<std::size_t>(s.n_heads * s.head_dim);
  const auto q = random_buffer(width * s.n_query, 3);
  const auto k = random_buffer(width * s.n_key, 4);
  const auto v = random_buffer(width * s.n_key, 5);
  std::vector<int> limit(static_cast<std::size_t>(s.n_query)), position(limit.size());
  for (int i = 0; i < s.n_query; ++i) limit[static_cast<std::size_t>(i)] = position[static_cast<std::size_t>(i)] = i;
  std::vector<float> probs(static_cast<std::size_t>(s.n_heads) * s.n_query * s.n_key);
  std::vector<float> out(width * s.n_query);
  for (auto _ : state) {
    attention_forward<float>(exec, s, q.data(), k.data(), v.data(), limit, position, nullptr, probs.data(),
                             out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_gemm, serial, Exec::serial)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_gemm, parallel, Exec::parallel)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_attention, serial, Exec::serial)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_attention, parallel, Exec::parallel)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
