#include <benchmark/benchmark.h>

#include "fsbm/transport.hpp"

using namespace fsbm;

static void BM_Sinkhorn(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(1);
  const transport::CostMatrix cost =
      transport::CostMatrix::squared_euclidean(normal_matrix(n, 2, rng), normal_matrix(n, 2, rng));
  const Vec w = Vec::Constant(n, 1.0 / static_cast<double>(n));
  transport::SinkhornOptions o;
  o.epsilon = 0.05;
  for (auto _ : state) benchmark::DoNotOptimize(transport::sinkhorn_plan(cost, w, w, o));
}
BENCHMARK(BM_Sinkhorn)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_ExactW2(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(2);
  const Mat a = normal_matrix(n, 2, rng);
  const Mat b = normal_matrix(n, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(transport::exact_w2(a, b));
}
BENCHMARK(BM_ExactW2)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_KnnKl(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(3);
  const Mat a = normal_matrix(n, 10, rng);
  const Mat b = normal_matrix(n, 10, rng);
  for (auto _ : state) benchmark::DoNotOptimize(transport::knn_kl(a, b));
}
BENCHMARK(BM_KnnKl)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
