#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "nimf/fusion.hpp"

namespace {

std::vector<nimf::BaseModel> make_bases(Eigen::Index width) {
  const std::vector<Eigen::Index> hidden{width, width};
  std::vector<nimf::BaseModel> bases;
  for (int m = 0; m < 2; ++m) {
    nimf::Model model = nimf::make_mlp(20, hidden, 10, 100 + static_cast<std::uint64_t>(m));
    nimf::Partition p = nimf::preactivation_partition(model);
    std::vector<nimf::ImportanceVector> scores;
    for (std::size_t l = 0; l < p.level_count(); ++l) {
      scores.push_back(nimf::uniform_scores(model.layer_width(p.boundaries[l]), l, m));
    }
    bases.push_back({std::move(model), std::move(p), std::move(scores), {}});
  }
  return bases;
}

void run(benchmark::State& state, nimf::FusionVariant variant) {
  const auto bases = make_bases(state.range(0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  nimf::Matrix x(400, 20);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  nimf::FusionConfig cfg;
  cfg.variant = variant;
  cfg.kmeans.restarts = 1;
  cfg.gradient.epochs = 5;
  cfg.gradient.last_epochs = 5;
  for (auto _ : state) benchmark::DoNotOptimize(nimf::fuse(bases, x, cfg));
}

}  // namespace

static void BM_FuseHfLinear(benchmark::State& s) { run(s, nimf::FusionVariant::hf_linear); }
static void BM_FuseKfLinear(benchmark::State& s) { run(s, nimf::FusionVariant::kf_linear); }
static void BM_FuseKfGradient(benchmark::State& s) { run(s, nimf::FusionVariant::kf_gradient); }
BENCHMARK(BM_FuseHfLinear)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FuseKfLinear)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FuseKfGradient)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
