#include <benchmark/benchmark.h>

#include "fsbm/driftnet.hpp"

using namespace fsbm;

namespace {

driftnet::NetConfig config(Index hidden) {
  driftnet::NetConfig c;
  c.input_dim = 2;
  c.hidden_dim = hidden;
  return c;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  Rng rng(1);
  const driftnet::DriftNetwork net(config(state.range(0)), rng);
  const Mat x = normal_matrix(256, 2, rng);
  const Vec t = Vec::LinSpaced(256, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, t));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256);

static void BM_RegressionGrads(benchmark::State& state) {
  Rng rng(2);
  const driftnet::DriftNetwork net(config(state.range(0)), rng);
  const Mat x = normal_matrix(256, 2, rng);
  const Vec t = Vec::LinSpaced(256, 0.0, 1.0);
  const Mat target = normal_matrix(256, 2, rng);
  Vec g;
  for (auto _ : state) benchmark::DoNotOptimize(net.regression_grads(x, t, target, g));
}
BENCHMARK(BM_RegressionGrads)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
