#include <cmath>

#include <gtest/gtest.h>

#include "nimf/metrics.hpp"

using namespace nimf;

namespace {

Model mlp(std::uint64_t seed) {
  const std::vector<Eigen::Index> hidden{6};
  return make_mlp(3, hidden, 3, seed);
}

SeedResult seed(std::uint64_t s, double b1, double b2, double ens) {
  return {s, {{b1, 1.0 - b1}, {b2, 1.0 - b2}}, {{"ensemble", Evaluation{ens, 0.1}}, {"HF", std::nullopt}}};
}

}  // namespace

TEST(Interpolation, FlatForIdenticalModelsAndExactEndpoints) {
  const Dataset d = synthetic_blobs(3, 3, 10, 1.0, 1);
  const Model a = mlp(1);
  const InterpolationCurve flat = interpolation_curve(a, a, d, 5);
  for (double l : flat.loss) EXPECT_DOUBLE_EQ(l, flat.loss.front());
  const Model b = mlp(2);
  const InterpolationCurve c = interpolation_curve(a, b, d, 3);
  EXPECT_EQ(c.lambdas, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(c.loss.front(), evaluate(a, d).loss);
  EXPECT_EQ(c.accuracy.back(), evaluate(b, d).accuracy);
  EXPECT_THROW(interpolation_curve(a, b, d, 1), std::invalid_argument);
  EXPECT_EQ(curve_to_csv(c).substr(0, 21), "lambda,loss,accuracy\n");
}

TEST(Ensemble, EvaluateUsesMeanSoftmax) {
  const Dataset d = synthetic_blobs(3, 3, 10, 1.0, 2);
  const std::vector<Model> one{mlp(3)};
  const Evaluation e = evaluate_ensemble(one, d);
  EXPECT_DOUBLE_EQ(e.accuracy, evaluate(one[0], d).accuracy);
  EXPECT_NEAR(e.loss, evaluate(one[0], d).loss, 1e-12);
}

TEST(Report, SingleMethodOneRow) {
  const std::vector<SeedResult> s{{0, {}, {{"KF", Evaluation{0.9, 0.3}}}}};
  const ComparisonReport r = comparison_report("x", s);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].method, "KF");
  EXPECT_EQ(r.rows[0].std_accuracy, 0.0);
}

TEST(Report, TwoSeedHandCheckAndBaseSorting) {
  const std::vector<SeedResult> s{seed(0, 0.6, 0.8, 0.9), seed(1, 0.7, 0.5, 0.7)};
  const ComparisonReport r = comparison_report("x", s);
  const ReportRow* b1 = r.row("base 1");
  ASSERT_NE(b1, nullptr);
  EXPECT_EQ(b1->accuracy, (std::vector<double>{0.8, 0.7}));
  EXPECT_NEAR(b1->mean_accuracy, 0.75, 1e-15);
  EXPECT_NEAR(b1->std_accuracy, std::sqrt(0.005), 1e-15);
  EXPECT_NEAR(r.row("ensemble")->std_accuracy, std::sqrt(0.02), 1e-15);
  EXPECT_FALSE(r.row("HF")->applicable);
  EXPECT_NE(r.to_text().find("N/A"), std::string::npos);
  EXPECT_NE(r.to_json().find("\"base 2\""), std::string::npos);
}

TEST(Report, SeedResultJsonRoundTrip) {
  const SeedResult s = seed(3, 0.25, 0.5, 0.75);
  const SeedResult t = seed_result_from_json(seed_result_to_json(s));
  EXPECT_EQ(t.seed, 3u);
  ASSERT_EQ(t.methods.size(), 2u);
  EXPECT_EQ(t.methods[0].eval->accuracy, 0.75);
  EXPECT_FALSE(t.methods[1].eval.has_value());
  EXPECT_EQ(t.bases[1].loss, 0.5);
}

TEST(Report, MeanStd) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto [m, s] = mean_std(v);
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);
  const std::vector<double> one{7.0};
  EXPECT_EQ(mean_std(one).second, 0.0);
}
