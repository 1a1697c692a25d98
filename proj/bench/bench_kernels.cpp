// Serial reference kernels against their OpenMP versions.
//   ./bench_kernels --benchmark_counters_tabular=true
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "sage3d/kernels.hpp"
#include "sage3d/random.hpp"

namespace {

using namespace sage3d;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -1, 1);
  return v;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
  return pts;
}

// Square-ish products at the sizes SA1/SA2 see: rows × K neighbours by width.
template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m * k, 1), b = random_matrix(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Gemm(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * k * n));
}

template <auto Fps>
void BM_fps(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto pts = random_points(n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fps(pts, n / 4, 0));
}

template <auto Knn>
void BM_knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto pts = random_points(n, 4);
  std::vector<std::size_t> idx(n * k);
  std::vector<double> dist(n * k);
  for (auto _ : state) {
    Knn(pts, pts, k, idx.data(), dist.data());
    benchmark::DoNotOptimize(idx.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<kernels::serial::gemm>)->Name("gemm/serial")->UseRealTime()->Args({1024, 64, 64})->Args({4096, 35, 32});
BENCHMARK(BM_gemm<kernels::parallel::gemm>)->Name("gemm/parallel")->UseRealTime()->Args({1024, 64, 64})->Args({4096, 35, 32});
BENCHMARK(BM_gemm<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->UseRealTime()->Args({64, 1024, 64});
BENCHMARK(BM_gemm<kernels::parallel::gemm_tn>)->Name("gemm_tn/parallel")->UseRealTime()->Args({64, 1024, 64});
BENCHMARK(BM_fps<kernels::serial::farthest_point_sample>)->Name("fps/serial")->UseRealTime()->Arg(256)->Arg(4096);
BENCHMARK(BM_fps<kernels::parallel::farthest_point_sample>)->Name("fps/parallel")->UseRealTime()->Arg(256)->Arg(4096);
BENCHMARK(BM_knn<kernels::serial::knn>)->Name("knn/serial")->UseRealTime()->Args({256, 16})->Args({2048, 32});
BENCHMARK(BM_knn<kernels::parallel::knn>)->Name("knn/parallel")->UseRealTime()->Args({256, 16})->Args({2048, 32});

BENCHMARK_MAIN();
