#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "nimf/fusion.hpp"
#include "oracles.hpp"

using namespace nimf;

namespace {

BaseModel as_base(const Model& m, int id, std::vector<std::size_t> counts = {}) {
  const Partition p = preactivation_partition(m);
  std::vector<ImportanceVector> s;
  for (std::size_t l = 0; l < p.level_count(); ++l) s.push_back(uniform_scores(m.layer_width(p.boundaries[l]), l, id));
  return {m, p, std::move(s), std::move(counts)};
}

Model mlp(std::uint64_t seed, Eigen::Index width = 6) {
  const std::vector<Eigen::Index> hidden{width, width};
  return make_mlp(3, hidden, 4, seed);
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(FusionConfig, PresetsAndValidation) {
  const auto s1 = GradientSettings::setting1();
  EXPECT_EQ(s1.optimizer, OptimizerKind::adam);
  EXPECT_EQ(s1.epochs, 100);
  EXPECT_EQ(s1.perturbation, 1.0);
  const auto s2 = GradientSettings::setting2();
  EXPECT_EQ(s2.optimizer, OptimizerKind::sgd);
  EXPECT_EQ(s2.lr, 1e-4);
  EXPECT_EQ(s2.last_optimizer, OptimizerKind::adam);
  FusionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gradient.val_split = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_variant("hf_linear"), FusionVariant::hf_linear);
  EXPECT_THROW(parse_variant("hf"), std::invalid_argument);
}

TEST(Fuse, SelfFusionIsFixpointForEveryVariant) {
  std::mt19937_64 rng(1);
  const Model m = mlp(2);
  const Matrix x = oracle::random_matrix(40, 3, rng);
  const std::vector<BaseModel> bases{as_base(m, 0), as_base(m, 1)};
  for (auto v : {FusionVariant::hf_linear, FusionVariant::kf_linear, FusionVariant::kf_gradient}) {
    FusionConfig cfg;
    cfg.variant = v;
    cfg.gradient.perturbation = 0.0;
    const FusionResult r = fuse(bases, x, cfg);
    EXPECT_LT(max_abs(forward(r.model, x) - forward(m, x)), 1e-6) << to_string(v);
    for (const auto& l : r.report.levels) EXPECT_LT(l.representation_cost, 1e-8);
  }
}

TEST(Fuse, HfRecoversPermutedTwin) {
  std::mt19937_64 rng(2);
  const Model a = mlp(3);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Model b = oracle::permute_hidden(oracle::permute_hidden(a, 0, perm), 2, perm);
  const Matrix x = oracle::random_matrix(30, 3, rng);
  ASSERT_LT(max_abs(forward(a, x) - forward(b, x)), 1e-12);
  const std::vector<BaseModel> bases{as_base(a, 0), as_base(b, 1)};
  FusionConfig cfg;
  cfg.variant = FusionVariant::hf_linear;
  const FusionResult r = fuse(bases, x, cfg);
  for (const auto& l : r.report.levels) EXPECT_LT(l.grouping_cost, 1e-8);
  EXPECT_LT(max_abs(forward(r.model, x) - forward(a, x)), 1e-6);
}

TEST(Fuse, HfIsNotApplicableBeyondTwoEqualModels) {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(10, 3, rng);
  FusionConfig cfg;
  cfg.variant = FusionVariant::hf_linear;
  const std::vector<BaseModel> three{as_base(mlp(1), 0), as_base(mlp(2), 1), as_base(mlp(3), 2)};
  try {
    fuse(three, x, cfg);
    FAIL();
  } catch (const FusionError& e) {
    EXPECT_NE(std::string(e.what()).find("N/A"), std::string::npos);
  }
  const std::vector<BaseModel> uneven{as_base(mlp(1, 6), 0), as_base(mlp(2, 5), 1)};
  EXPECT_THROW(fuse(uneven, x, cfg), FusionError);
}

TEST(Fuse, KfFusesThreeModelsIntoRequestedWidths) {
  std::mt19937_64 rng(4);
  const Matrix x = oracle::random_matrix(50, 3, rng);
  const std::vector<BaseModel> bases{as_base(mlp(1), 0), as_base(mlp(2), 1), as_base(mlp(3), 2)};
  FusionConfig cfg;
  cfg.widths = {5, 7, 4};
  const FusionResult r = fuse(bases, x, cfg);
  EXPECT_EQ(r.model.layer_width(0), 5);
  EXPECT_EQ(r.model.layer_width(2), 7);
  EXPECT_EQ(r.model.output_dim(), 4);
  ASSERT_EQ(r.report.levels.size(), 3u);
  for (const auto& l : r.report.levels) EXPECT_LT(l.approximation_residual, 1e-8);
  cfg.widths = {5, 7, 3};
  EXPECT_THROW(fuse(bases, x, cfg), std::exception);
}

TEST(Fuse, ReportJsonHasLevels) {
  std::mt19937_64 rng(5);
  const Matrix x = oracle::random_matrix(20, 3, rng);
  const std::vector<BaseModel> bases{as_base(mlp(1), 0), as_base(mlp(2), 1)};
  const FusionResult r = fuse(bases, x, FusionConfig{});
  const std::string j = r.report.to_json();
  EXPECT_NE(j.find("\"levels\""), std::string::npos);
  EXPECT_NE(j.find("\"representation_cost\""), std::string::npos);
}

TEST(FitLevelLinear, TargetInColumnSpace) {
  std::mt19937_64 rng(6);
  const Matrix x = oracle::random_matrix(12, 3, rng);
  const Matrix t = x.col(0).replicate(1, 2);
  const AffineLayer l = fit_level_linear(x, t);
  EXPECT_LT(max_abs(apply_layer(l, x) - t), 1e-10);
  const Matrix r = x * oracle::random_matrix(3, 4, rng);
  EXPECT_LT(max_abs(apply_layer(fit_level_linear(x, r), x) - r), 1e-9);
}

TEST(FitLevelLinear, ResidualIsProjectionResidual) {
  std::mt19937_64 rng(7);
  const Matrix x = oracle::random_matrix(15, 3, rng);
  const Matrix t = oracle::random_matrix(15, 2, rng);
  const AffineLayer l = fit_level_linear(x, t);
  const Matrix xb = with_bias_column(x);
  const double expected = (t - oracle::projector(xb) * t).norm();
  EXPECT_NEAR((apply_layer(l, x) - t).norm(), expected, 1e-10);
}

TEST(KfLinearLevel, FullRankPreviousLevelIsPlainClustering) {
  std::mt19937_64 rng(8);
  const Matrix x = oracle::random_matrix(6, 6, rng);  // [X | 1] spans R^6
  const Matrix z = oracle::random_matrix(6, 10, rng);
  const Vector s = Vector::Ones(10);
  FusionConfig cfg;
  const LinearLevelFit f = kf_linear_level(z, s, x, 4, cfg);
  EXPECT_LT(max_abs(f.projected - z), 1e-10);
  EXPECT_LT(max_abs(apply_layer(f.layer, x) - targets_from_assignment(z, s, f.grouping.assignment, 4)), 1e-8);
}

TEST(KfLinearLevel, OnesColumnProjectsToMeans) {
  std::mt19937_64 rng(9);
  const Matrix x(5, 0);
  Matrix z = oracle::random_matrix(5, 4, rng);
  z.col(1).array() += 10.0;
  z.col(3).array() += 10.0;
  FusionConfig cfg;
  const LinearLevelFit f = kf_linear_level(z, Vector::Ones(4), x, 2, cfg);
  for (Eigen::Index j = 0; j < 4; ++j) {
    EXPECT_LT((f.projected.col(j).array() - z.col(j).mean()).abs().maxCoeff(), 1e-10);
  }
  EXPECT_EQ(f.grouping.assignment[1], f.grouping.assignment[3]);
  EXPECT_NE(f.grouping.assignment[0], f.grouping.assignment[1]);
}

TEST(KfLinearLevel, CostDecomposesIntoProjectedGroupingPlusResidual) {
  std::mt19937_64 rng(10);
  const Matrix x = oracle::random_matrix(20, 4, rng);
  const Matrix z = oracle::random_matrix(20, 15, rng);  // three models of width 5
  const Vector s = oracle::random_positive(15, rng);
  FusionConfig cfg;
  const LinearLevelFit f = kf_linear_level(z, s, x, 5, cfg);
  const Matrix p = oracle::projector(with_bias_column(x));
  const Matrix pz = p * z;
  const auto& a = f.grouping.assignment;
  double residual = 0.0;
  for (Eigen::Index j = 0; j < 15; ++j) residual += s(j) * (z.col(j) - pz.col(j)).squaredNorm();
  const double grouping = oracle::assigned_sq_cost(oracle::cluster_means(pz, s, a, 5), pz, s, a);
  EXPECT_NEAR(assigned_cost(apply_layer(f.layer, x), z, s, a), grouping + residual, 1e-9 * (grouping + residual));
}

TEST(KfGradientLevel, ZeroNoiseFixpointKeepsWeights) {
  std::mt19937_64 rng(11);
  const Model m = mlp(12);
  const std::vector<Layer> level(m.layers().begin(), m.layers().begin() + 1);
  const Matrix x = oracle::random_matrix(30, 3, rng);
  const Matrix t = apply_layer(level[0], x);
  GradientSettings gs;
  gs.epochs = 5;
  const GradientFit f = kf_gradient_level(x, t, level, gs, false, 1);
  EXPECT_EQ(f.val_loss.front(), 0.0);
  EXPECT_EQ(f.best_epoch, 0);
  EXPECT_EQ(std::get<AffineLayer>(f.layers[0]).weight, m.affine(0).weight);
}

TEST(KfGradientLevel, ConvexCaseReachesClosedForm) {
  std::mt19937_64 rng(12);
  const Matrix x = oracle::random_matrix(40, 3, rng);
  const Matrix t = oracle::random_matrix(40, 2, rng);
  GradientSettings gs;
  gs.lr = 1e-2;
  gs.epochs = 3000;
  gs.weight_decay = 0.0;
  gs.val_split = 0.0;
  gs.batch_size = 40;
  gs.last_lr = gs.lr;
  gs.last_epochs = gs.epochs;
  const GradientFit f =
      kf_gradient_level(x, t, {AffineLayer{Matrix::Zero(2, 3), Vector::Zero(2)}}, gs, true, 3);
  const double got = (apply_layer(f.layers[0], x) - t).squaredNorm();
  const double best = (apply_layer(fit_level_linear(x, t), x) - t).squaredNorm();
  EXPECT_LE((got - best) / best, 1e-3);
}

TEST(OutputTargets, HeadWeights) {
  std::mt19937_64 rng(13);
  const std::vector<Matrix> logits{oracle::random_matrix(5, 3, rng), oracle::random_matrix(5, 3, rng)};
  const std::vector<Vector> none;
  const std::vector<std::vector<std::size_t>> equal{{4, 4, 4}, {4, 4, 4}};
  const GroupingResult g = output_level_targets(logits, none, equal, true);
  EXPECT_LT(max_abs(g.targets - 0.5 * (logits[0] + logits[1])), 1e-14);

  const std::vector<std::vector<std::size_t>> skewed{{0, 2, 5}, {3, 6, 5}};
  const GroupingResult h = output_level_targets(logits, none, skewed, true);
  EXPECT_LT(max_abs(h.targets.col(0) - logits[1].col(0)), 1e-14);  // model 0 saw no class 0
  EXPECT_LT(max_abs(h.targets.col(1) - (2.0 * logits[0].col(1) + 6.0 * logits[1].col(1)) / 8.0), 1e-14);
  EXPECT_EQ(h.assignment, (std::vector<int>{0, 1, 2, 0, 1, 2}));
}

TEST(RepresentationCost, ZeroWhenEveryNeuronIsReplicated) {
  std::mt19937_64 rng(14);
  const Matrix z = oracle::random_matrix(6, 4, rng);
  Matrix fused(6, 5);
  fused << z, oracle::random_matrix(6, 1, rng);
  EXPECT_NEAR(representation_cost(fused, z, Vector::Ones(4)), 0.0, 1e-15);
}

TEST(RepresentationCost, UnitScoresGiveUnweightedValue) {
  std::mt19937_64 rng(15);
  const Matrix zf = oracle::random_matrix(5, 3, rng);
  const Matrix z = oracle::random_matrix(5, 7, rng);
  double expected = 0.0;
  for (Eigen::Index b = 0; b < 5; ++b) {
    for (Eigen::Index j = 0; j < 7; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < 3; ++k) best = std::min(best, (zf(b, k) - z(b, j)) * (zf(b, k) - z(b, j)));
      expected += best;
    }
  }
  EXPECT_NEAR(representation_cost(zf, z, Vector::Ones(7)), expected, 1e-10);
}

TEST(Baselines, VanillaAverage) {
  const Model a = mlp(1);
  const Model b = mlp(2);
  const std::vector<Model> same{a, a};
  EXPECT_EQ(vanilla_average(same).affine(2).weight, a.affine(2).weight);
  const std::vector<Model> two{a, b};
  std::vector<std::vector<Vector>> w(2);
  for (std::size_t l : a.affine_indices()) {
    w[0].push_back(Vector::Ones(a.affine(l).out_dim()));
    w[1].push_back(Vector::Zero(a.affine(l).out_dim()));
  }
  const Model r = vanilla_average(two, w);
  for (std::size_t l : a.affine_indices()) EXPECT_EQ(r.affine(l).weight, a.affine(l).weight);
  const Model mean = vanilla_average(two);
  EXPECT_LT(max_abs(mean.affine(0).weight - 0.5 * (a.affine(0).weight + b.affine(0).weight)), 1e-15);
}

TEST(Baselines, EnsembleAndKd) {
  std::mt19937_64 rng(16);
  const Model a = mlp(1);
  const Matrix x = oracle::random_matrix(8, 3, rng);
  const std::vector<Model> one{a};
  EXPECT_LT(max_abs(ensemble_predict(one, x) - softmax(forward(a, x))), 1e-15);
  const Model kd = last_layer_kd(one, a, x, KdSettings{});
  EXPECT_LT(max_abs(kd.affine(4).weight - a.affine(4).weight), 1e-12);
  EXPECT_EQ(kd.affine(0).weight, a.affine(0).weight);
}
