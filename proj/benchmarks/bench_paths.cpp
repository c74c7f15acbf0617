#include <benchmark/benchmark.h>

#include "fsbm/guidance.hpp"
#include "fsbm/paths.hpp"

using namespace fsbm;

static void BM_SplineEval(benchmark::State& state) {
  Rng rng(1);
  const paths::ConditionalPath p =
      paths::brownian_bridge_path(normal_matrix(2, 1, rng), normal_matrix(2, 1, rng), 1.0, 8);
  double t = 0.0;
  for (auto _ : state) {
    t = t > 0.99 ? 0.01 : t + 0.01;
    benchmark::DoNotOptimize(paths::spline_eval(p, t));
  }
}
BENCHMARK(BM_SplineEval);

static void BM_OptimizeSplineGuided(benchmark::State& state) {
  Rng rng(2);
  const Mat src = normal_matrix(1, 2, rng);
  const Mat dst = normal_matrix(1, 2, rng);
  const guidance::GuidanceContext ctx(guidance::KeypointSet::linear(src, dst), 1.0);
  paths::SplineProblem prob;
  prob.x0 = src.row(0).transpose() + Vec::Constant(2, 0.3);
  prob.x1 = dst.row(0).transpose();
  prob.guidance = &ctx;
  paths::SplineOptions opts;
  opts.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(paths::optimize_spline(prob, opts, rng));
}
BENCHMARK(BM_OptimizeSplineGuided)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
