#include <random>

#include <benchmark/benchmark.h>

#include "nimf/grouping.hpp"

static void BM_WeightedKMeans(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const int k = static_cast<int>(d / 4);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  nimf::Matrix points(d, 400);
  for (Eigen::Index i = 0; i < points.size(); ++i) points.data()[i] = g(rng);
  const nimf::Vector w = nimf::Vector::Ones(d);
  nimf::KMeansOptions opts;
  opts.restarts = 1;
  for (auto _ : state) benchmark::DoNotOptimize(nimf::weighted_kmeans(points, w, k, opts));
}
BENCHMARK(BM_WeightedKMeans)->Arg(64)->Arg(128)->Arg(256);
