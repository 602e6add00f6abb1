#include <random>

#include <benchmark/benchmark.h>

#include "nimf/grouping.hpp"

static void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nimf::Matrix cost(n, n);
  for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(nimf::hungarian(cost));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hungarian)->RangeMultiplier(2)->Range(16, 512)->Complexity(benchmark::oNCubed);
