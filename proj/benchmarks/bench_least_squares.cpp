#include <random>

#include <benchmark/benchmark.h>

#include "nimf/numerics.hpp"

static void BM_WeightedLeastSquares(benchmark::State& state) {
  const auto p = static_cast<Eigen::Index>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  nimf::Matrix x(400, p + 1), t(400, 32);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = g(rng);
  const auto w = nimf::DiagWeights::uniform(400);
  for (auto _ : state) benchmark::DoNotOptimize(nimf::weighted_least_squares(x, w, t));
}
BENCHMARK(BM_WeightedLeastSquares)->Arg(16)->Arg(64)->Arg(256);
