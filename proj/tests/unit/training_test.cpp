#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "nimf/training.hpp"
#include "oracles.hpp"

using namespace nimf;

TEST(Schedule, WarmupThenCosine) {
  TrainConfig c;
  c.lr = 1.0;
  c.min_lr = 0.0;
  c.warmup_epochs = 4;
  c.epochs = 14;
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 0), 0.25);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 3), 1.0);
  EXPECT_NEAR(scheduled_lr(c, 4), 1.0, 1e-12);
  EXPECT_GT(scheduled_lr(c, 8), scheduled_lr(c, 12));
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  const Dataset d = synthetic_blobs(3, 4, 20, 1.0, 1);
  const std::vector<Eigen::Index> hidden{8};
  const Model m = make_mlp(4, hidden, 3, 2);
  TrainConfig c;
  c.epochs = 1;
  c.lr = 0.0;
  c.min_lr = 0.0;
  c.warmup_epochs = 0;
  const TrainResult r = train(m, d, c);
  EXPECT_EQ(r.model.affine(0).weight, m.affine(0).weight);
  EXPECT_EQ(finetune(m, d, c).model.affine(2).bias, m.affine(2).bias);
}

TEST(Train, BlobsReachHighTrainAccuracy) {
  const Dataset d = synthetic_blobs(10, 20, 100, 1.0, 3);
  const std::vector<Eigen::Index> hidden{32, 32};
  TrainConfig c;
  c.lr = 0.01;
  c.min_lr = 1e-4;
  c.epochs = 30;
  c.batch_size = 64;
  c.seed = 4;
  const TrainResult r = train(make_mlp(20, hidden, 10, 5), d, c);
  EXPECT_GE(evaluate(r.model, d).accuracy, 0.95);
  ASSERT_EQ(r.log.size(), 30u);
  EXPECT_TRUE(std::isnan(r.log.back().val_acc));
  EXPECT_EQ(training_log_csv(r.log).substr(0, 5), "epoch");
}

TEST(Train, Deterministic) {
  const Dataset d = synthetic_blobs(3, 2, 20, 1.0, 6);
  const std::vector<Eigen::Index> hidden{4};
  TrainConfig c;
  c.epochs = 3;
  c.seed = 7;
  const Model m = make_mlp(2, hidden, 3, 8);
  EXPECT_EQ(train(m, d, c).model.affine(0).weight, train(m, d, c).model.affine(0).weight);
}

TEST(Evaluate, UniformLogitsAndPerfectPredictions) {
  const std::vector<int> labels{0, 3, 0, 9};
  const Evaluation u = evaluate_logits(Matrix::Zero(4, 10), labels);
  EXPECT_DOUBLE_EQ(u.accuracy, 0.5);
  EXPECT_NEAR(u.loss, std::log(10.0), 1e-12);
  Matrix onehot = Matrix::Zero(4, 10);
  for (int i = 0; i < 4; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 50.0;
  EXPECT_DOUBLE_EQ(evaluate_logits(onehot, labels).accuracy, 1.0);
}

TEST(Evaluate, MatchesScalarRecomputation) {
  std::mt19937_64 rng(9);
  const Matrix logits = oracle::random_matrix(7, 4, rng, 3.0);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2};
  double loss = 0.0;
  int correct = 0;
  for (Eigen::Index i = 0; i < 7; ++i) {
    double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    int arg = 0;
    for (Eigen::Index c = 0; c < 4; ++c) {
      z += std::exp(logits(i, c) - mx);
      if (logits(i, c) > logits(i, arg)) arg = static_cast<int>(c);
    }
    loss += -(logits(i, labels[static_cast<std::size_t>(i)]) - mx - std::log(z));
    correct += arg == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  const Evaluation e = evaluate_logits(logits, labels);
  EXPECT_NEAR(e.loss, loss / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(e.accuracy, correct / 7.0);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Matrix logits = oracle::random_matrix(3, 4, rng);
  const std::vector<int> labels{1, 3, 0};
  Matrix grad;
  cross_entropy(logits, labels, 0.1, &grad);
  const Matrix fd = oracle::finite_difference([&](const Matrix& l) { return cross_entropy(l, labels, 0.1); }, logits);
  EXPECT_LT((fd - grad).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Optimizer, SgdStepAndDecoupledDecay) {
  std::vector<Layer> layers{AffineLayer{Matrix::Ones(1, 1), Vector::Zero(1)}};
  auto params = affine_params(layers);
  std::vector<AffineGrad> grads{{Matrix::Constant(1, 1, 2.0), Vector::Zero(1)}};
  Optimizer opt(OptimizerKind::sgd, 0.5);
  opt.step(params, grads, 0.1);
  // 1 - 0.1 * 2 = 0.8, then decay 0.8 - 0.1 * 0.5 * 0.8 = 0.76.
  EXPECT_NEAR(std::get<AffineLayer>(layers[0]).weight(0, 0), 0.76, 1e-15);
}
