#include <filesystem>

#include <gtest/gtest.h>

#include "pipeline.hpp"

using namespace nimf;
using namespace nimf::cli;

namespace {

const char* kManifest = R"(
[experiment]
name = tiny
seeds = 0
fusion_samples = 60

[dataset]
classes = 3
dim = 3
per_class = 40
test_per_class = 10
spread = 0.3
seed = 2

[split]
models = 2

[model]
hidden = 6,6

[train]
epochs = 10
lr = 0.01

[kd]
epochs = 2

[fusion:KF]
variant = kf_linear

[fusion:HF]
variant = hf_linear
score = deeplift
)";

}  // namespace

TEST(Pipeline, ManifestParsing) {
  const RunManifest m = parse_manifest(ConfigFile::parse(kManifest));
  EXPECT_EQ(m.name, "tiny");
  EXPECT_EQ(m.dataset.classes, 3);
  EXPECT_EQ(m.model.hidden, (std::vector<Eigen::Index>{6, 6}));
  ASSERT_EQ(m.fusions.size(), 2u);
  EXPECT_EQ(m.fusions[1].name, "HF");
  EXPECT_EQ(m.fusions[1].config.score_kind, ScoreKind::deeplift);
  EXPECT_THROW(parse_manifest(ConfigFile::parse("[oops]\n")), ConfigError);
  EXPECT_THROW(parse_manifest(ConfigFile::parse("[experiment]\nfusion_source = 5\n")), ConfigError);
}

TEST(Pipeline, BlobTestSetIsHeldOut) {
  DatasetSpec s;
  s.classes = 4;
  s.per_class = 20;
  s.test_per_class = 5;
  const DataPair d = load_data(s);
  EXPECT_EQ(d.train.size(), 80);
  EXPECT_EQ(d.test.size(), 20);
  for (std::size_t c : d.test.class_counts()) EXPECT_EQ(c, 5u);
}

TEST(Pipeline, SeedsAndBatches) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  const std::vector<std::size_t> pool{4, 8, 15, 16, 23, 42};
  const auto b = fusion_batch(pool, 3, 7);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b, fusion_batch(pool, 3, 7));
  EXPECT_EQ(fusion_batch(pool, 100, 7).size(), 6u);
}

TEST(Pipeline, ScoresCsvRoundTrip) {
  const std::vector<ImportanceVector> v{uniform_scores(3, 0, 0), uniform_scores(2, 1, 0), uniform_scores(3, 0, 1),
                                        uniform_scores(2, 1, 1)};
  const auto parsed = scores_from_csv(scores_to_csv(v));
  ASSERT_EQ(parsed.size(), 2u);
  ASSERT_EQ(parsed[1].size(), 2u);
  EXPECT_EQ(parsed[1][1].scores(), v[3].scores());
  EXPECT_THROW(scores_from_csv("bad header\n"), std::runtime_error);
}

TEST(Pipeline, RunSeedProducesEveryMethod) {
  const RunManifest m = parse_manifest(ConfigFile::parse(kManifest));
  const DataPair d = load_data(m.dataset);
  const SeedArtifacts a = run_seed(m, d, 0, {});
  ASSERT_EQ(a.result.bases.size(), 2u);
  std::vector<std::string> names;
  for (const auto& r : a.result.methods) {
    names.push_back(r.method);
    ASSERT_TRUE(r.eval.has_value()) << r.method;
  }
  EXPECT_EQ(names, (std::vector<std::string>{"vanilla", "ensemble", "KD", "KF", "HF"}));
  EXPECT_EQ(seed_result_to_json(run_seed(m, d, 0, {}).result), seed_result_to_json(a.result));
}

TEST(Pipeline, HfIsNotApplicableWithThreeModels) {
  RunManifest m = parse_manifest(ConfigFile::parse(kManifest));
  m.split.models = 3;
  const DataPair d = load_data(m.dataset);
  const SeedArtifacts a = run_seed(m, d, 1, {});
  EXPECT_FALSE(a.result.methods.back().eval.has_value());
  EXPECT_TRUE(a.result.methods[3].eval.has_value());
}

TEST(Pipeline, ExperimentWritesArtifacts) {
  const RunManifest m = parse_manifest(ConfigFile::parse(kManifest));
  const auto dir = std::filesystem::temp_directory_path() / "nimf_pipeline_test";
  std::filesystem::remove_all(dir);
  const ComparisonReport r = run_experiment(m, kManifest, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "seed_0" / "results.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "seed_0" / "fused_KF.nimf"));
  EXPECT_NE(r.row("KF"), nullptr);
  std::filesystem::remove_all(dir);
}
