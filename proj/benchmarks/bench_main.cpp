#include <benchmark/benchmark.h>

#include "attnflow/flow.hpp"
#include "attnflow/theory.hpp"

using namespace attnflow;

namespace {

PopulationStats stats_for_dim(int dim) {
  return population_stats(build_covariance(inverse_index_spectrum(dim)), LengthLaw::fixed(31));
}

Params make_params(ModelKind kind, int dim, int heads, int rank) {
  SeedStream s(0, "bench");
  if (kind == ModelKind::merged) return init_merged(dim, heads, 0.1, s);
  return init_separate(dim, heads, rank, 0.1, s);
}

void BM_GradMerged(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto stats = stats_for_dim(dim);
  const Params p = make_params(ModelKind::merged, dim, dim + 1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(grad(p, stats));
}
BENCHMARK(BM_GradMerged)->Arg(4)->Arg(8)->Arg(16);

void BM_GradSeparate(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const int rank = static_cast<int>(state.range(1));
  const auto stats = stats_for_dim(dim);
  const Params p = make_params(ModelKind::separate, dim, dim + 1, rank);
  for (auto _ : state) benchmark::DoNotOptimize(grad(p, stats));
}
BENCHMARK(BM_GradSeparate)->Args({4, 1})->Args({8, 1})->Args({8, 4})->Args({16, 1});

void BM_Rk4Step(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto stats = stats_for_dim(dim);
  Params p = make_params(ModelKind::separate, dim, dim + 1, 1);
  for (auto _ : state) {
    step(p, stats, 1e-3, 1.0, Integrator::rk4);
    benchmark::DoNotOptimize(flat_of(p).data());
  }
}
BENCHMARK(BM_Rk4Step)->Arg(4)->Arg(8);

void BM_McGradient(benchmark::State& state) {
  const auto stats = stats_for_dim(4);
  const Params p = make_params(ModelKind::separate, 4, 4, 1);
  const long batch = state.range(0);
  for (auto _ : state)
    benchmark::DoNotOptimize(mc_gradient(p, stats.cov, LengthLaw::fixed(31), batch, SeedStream(1, "mc")));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_McGradient)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_FixedPointCatalog(benchmark::State& state) {
  const auto stats = stats_for_dim(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fixed_point_catalog(stats));
}
BENCHMARK(BM_FixedPointCatalog)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
