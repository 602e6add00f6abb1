#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "nimf/attribution.hpp"
#include "oracles.hpp"

using namespace nimf;

namespace {

Model relu_mlp(std::uint64_t seed) {
  const std::vector<Eigen::Index> hidden{9, 6};
  return make_mlp(4, hidden, 3, seed);
}

std::vector<int> targets_for(Eigen::Index n, int classes, std::mt19937_64& rng) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& v : t) v = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
  return t;
}

}  // namespace

TEST(Uniform, ScoresSumToOne) {
  EXPECT_EQ(uniform_scores(1).scores()(0), 1.0);
  EXPECT_NEAR(uniform_scores(7).scores().sum(), 1.0, 1e-15);
}

TEST(ImportanceVector, RejectsNegativeAndFloors) {
  EXPECT_THROW(ImportanceVector(0, 0, Vector::Constant(2, -1.0)), std::invalid_argument);
  const ImportanceVector v(0, 0, Vector::Zero(2));
  EXPECT_EQ(v.floored()(1), kScoreFloor);
}

TEST(Conductance, ZeroWhenBaselineEqualsInput) {
  std::mt19937_64 rng(1);
  const Model m = relu_mlp(2);
  const Matrix x = oracle::random_matrix(5, 4, rng);
  const auto t = targets_for(5, 3, rng);
  EXPECT_EQ(conductance_per_sample(m, 0, x, x, t, 16).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Conductance, LinearNetworkClosedForm) {
  // F = w2 . (W1 x + b1): conductance of unit j = (W1 x)_j * w2_j for any steps.
  std::mt19937_64 rng(2);
  const std::vector<Eigen::Index> hidden{5};
  const Model m = make_mlp(3, hidden, 2, 3, Activation::identity);
  const Matrix x = oracle::random_matrix(4, 3, rng);
  const auto t = targets_for(4, 2, rng);
  const Matrix w1 = m.affine(0).weight;
  const Matrix w2 = m.affine(2).weight;
  for (int steps : {1, 3, 50}) {
    const Matrix c = conductance_per_sample(m, 0, x, Matrix(), t, steps);
    for (Eigen::Index s = 0; s < 4; ++s) {
      for (Eigen::Index j = 0; j < 5; ++j) {
        const double expected = (w1.row(j) * x.row(s).transpose())(0) * w2(t[static_cast<std::size_t>(s)], j);
        EXPECT_NEAR(c(s, j), expected, 1e-12);
      }
    }
  }
}

TEST(Conductance, CompletenessAndConvergence) {
  std::mt19937_64 rng(3);
  const Model m = relu_mlp(4);
  const Matrix x = oracle::random_matrix(16, 4, rng);
  const auto t = targets_for(16, 3, rng);
  const Matrix fx = forward(m, x);
  const Matrix f0 = forward(m, Matrix::Zero(1, 4));
  const Matrix c = conductance_per_sample(m, 0, x, Matrix(), t, 256);
  double err = 0.0;
  double mass = 0.0;
  for (Eigen::Index s = 0; s < 16; ++s) {
    const int k = t[static_cast<std::size_t>(s)];
    err += std::abs(c.row(s).sum() - (fx(s, k) - f0(0, k)));
    mass += std::abs(fx(s, k) - f0(0, k));
  }
  EXPECT_LT(err / mass, 0.02);
  const Partition p = preactivation_partition(m);
  const Vector s128 = conductance_scores(m, p, 0, x, Matrix(), t, 128).scores();
  const Vector s256 = conductance_scores(m, p, 0, x, Matrix(), t, 256).scores();
  for (Eigen::Index j = 0; j < s256.size(); ++j) {
    EXPECT_LE(std::abs(s256(j) - s128(j)), 0.01 * s256.cwiseAbs().maxCoeff());
  }
}

TEST(DeepLift, ZeroWhenInputEqualsBaseline) {
  std::mt19937_64 rng(4);
  const Model m = relu_mlp(5);
  const Matrix x = oracle::random_matrix(3, 4, rng);
  const auto t = targets_for(3, 3, rng);
  EXPECT_EQ(deeplift_per_sample(m, std::nullopt, x, x, t).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DeepLift, SingleAffineLayerClosedForm) {
  std::mt19937_64 rng(5);
  const Model m({AffineLayer{oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 1, rng).col(0)}});
  const Matrix x = oracle::random_matrix(2, 4, rng);
  const std::vector<int> t{2, 0};
  const Matrix c = deeplift_per_sample(m, std::nullopt, x, Matrix(), t);
  for (Eigen::Index s = 0; s < 2; ++s) {
    for (Eigen::Index i = 0; i < 4; ++i) {
      EXPECT_NEAR(c(s, i), m.affine(0).weight(t[static_cast<std::size_t>(s)], i) * x(s, i), 1e-14);
    }
  }
}

TEST(DeepLift, SummationToDelta) {
  std::mt19937_64 rng(6);
  const Model m = relu_mlp(7);
  const Matrix x = oracle::random_matrix(10, 4, rng);
  const Matrix base = oracle::random_matrix(1, 4, rng);
  const auto t = targets_for(10, 3, rng);
  const Matrix fx = forward(m, x);
  const Matrix fb = forward(m, base);
  for (Tap tap : {Tap{}, Tap{0}, Tap{1}, Tap{2}, Tap{3}}) {
    const Matrix c = deeplift_per_sample(m, tap, x, base, t);
    for (Eigen::Index s = 0; s < 10; ++s) {
      const int k = t[static_cast<std::size_t>(s)];
      EXPECT_NEAR(c.row(s).sum(), fx(s, k) - fb(0, k), 1e-10);
    }
  }
}

TEST(Attribution, PermutationEquivariance) {
  std::mt19937_64 rng(8);
  const Model m = relu_mlp(9);
  const Partition p = preactivation_partition(m);
  const Matrix x = oracle::random_matrix(6, 4, rng);
  const auto t = targets_for(6, 3, rng);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Model q = oracle::permute_hidden(m, 2, perm);
  const Vector a = deeplift_scores(m, p, 1, x, Matrix(), t).scores();
  const Vector b = deeplift_scores(q, p, 1, x, Matrix(), t).scores();
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(b(i), a(perm[static_cast<std::size_t>(i)]), 1e-12);
}

TEST(Attribution, ScoreLevelsCoversEveryLevelAndCsv) {
  std::mt19937_64 rng(10);
  const Model m = relu_mlp(11);
  const Partition p = preactivation_partition(m);
  const Matrix x = oracle::random_matrix(4, 4, rng);
  const auto t = targets_for(4, 3, rng);
  const auto levels = score_levels(m, p, ScoreKind::conductance, x, t, 1, 8);
  ASSERT_EQ(levels.size(), 3u);
  EXPECT_EQ(levels[1].size(), 6);
  EXPECT_EQ(levels[2].model_id(), 1);
  const std::string csv = scores_to_csv(levels);
  EXPECT_EQ(csv.rfind("model_id,level,neuron,score\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9 + 6 + 3);
}

TEST(Attribution, ParseKind) {
  EXPECT_EQ(parse_score_kind("deeplift"), ScoreKind::deeplift);
  EXPECT_THROW(parse_score_kind("saliency"), std::invalid_argument);
}
