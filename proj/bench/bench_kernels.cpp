// Serial reference vs OpenMP kernels. Thread count follows DTOK_THREADS.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "dtok/kernels.hpp"
#include "dtok/parallel.hpp"

namespace k = dtok::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> unit_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  const auto f = random_floats(n * dim, seed);
  std::vector<double> out(f.begin(), f.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < dim; ++c) s += out[i * dim + c] * out[i * dim + c];
    for (std::size_t c = 0; c < dim; ++c) out[i * dim + c] /= std::sqrt(s);
  }
  return out;
}

template <bool Parallel>
void BM_Lookup(benchmark::State& state) {
  const std::size_t n = 2048, kk = static_cast<std::size_t>(state.range(0)), dim = 64;
  const auto tokens = random_floats(n * dim, 1), entries = random_floats(kk * dim, 2);
  const std::vector<double> w(dim, 1.0 / dim);
  const k::NearestQuery q{{tokens, n, dim}, {entries, kk, dim}, w};
  std::vector<std::uint32_t> idx(n);
  std::vector<double> dist(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::assign_nearest(q, idx, dist);
    else
      k::serial::assign_nearest(q, idx, dist);
    benchmark::DoNotOptimize(idx.data());
  }
  state.SetItemsProcessed(state.iterations() * n * kk);
}

template <bool Parallel>
void BM_Gram(benchmark::State& state) {
  const std::size_t n = 4096, dim = static_cast<std::size_t>(state.range(0));
  const auto x = random_floats(n * dim, 3);
  std::vector<double> sum(dim), gram(dim * dim);
  for (auto _ : state) {
    const k::GramAccumulation acc{sum, gram};
    if constexpr (Parallel)
      k::parallel::accumulate_gram({x, n, dim}, acc);
    else
      k::serial::accumulate_gram({x, n, dim}, acc);
    benchmark::DoNotOptimize(gram.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Parallel>
void BM_Pairwise(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), dim = 32;
  const auto a = unit_rows(n, dim, 4), b = unit_rows(n, dim, 5);
  for (auto _ : state) {
    double v;
    if constexpr (Parallel)
      v = k::parallel::pairwise_inner_abs_diff(a, dim, b, dim, n);
    else
      v = k::serial::pairwise_inner_abs_diff(a, dim, b, dim, n);
    benchmark::DoNotOptimize(v);
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}

}  // namespace

BENCHMARK(BM_Lookup<false>)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lookup<true>)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gram<false>)->Arg(64)->Arg(768)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gram<true>)->Arg(64)->Arg(768)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pairwise<false>)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pairwise<true>)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  dtok::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
