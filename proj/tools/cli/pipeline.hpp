#pragma once

// Building blocks shared by the nimf subcommands: dataset descriptors,
// experiment manifests, fusion-batch selection and the experiment driver.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nimf/config.hpp"
#include "nimf/data.hpp"
#include "nimf/fusion.hpp"
#include "nimf/metrics.hpp"
#include "nimf/training.hpp"

namespace nimf::cli {

/// Section names accepted in any nimf config file.
void check_known_sections(const ConfigFile& file);

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | idx
  int classes = 10;
  int dim = 20;
  int per_class = 200;
  int test_per_class = 100;
  double spread = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct DataPair {
  Dataset train;
  Dataset test;
};

DatasetSpec parse_dataset_spec(const ConfigFile& file);
/// Blobs: one draw of per_class + test_per_class samples per class; the first
/// test_per_class samples of each class (in generated order) form the test set.
DataPair load_data(const DatasetSpec& spec);

struct ModelSpecConfig {
  std::vector<Eigen::Index> hidden{32, 32};
  Activation activation = Activation::relu;
};

ModelSpecConfig parse_model_spec(const ConfigFile& file);

struct SplitSpec {
  SplitRegime regime = SplitRegime::dirichlet;
  int models = 2;
  double alpha_min = 1.0;
  double ratio = 0.2;
};

SplitSpec parse_split_spec(const ConfigFile& file);
SplitPlan make_split(const SplitSpec& spec, const Dataset& train, std::uint64_t seed);

struct NamedFusion {
  std::string name;
  FusionConfig config;
};

struct RunManifest {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "runs";
  int fusion_samples = 400;
  int fusion_source = 0;  // fusion batch is drawn from this model's training data
  int conductance_steps = 64;
  int interpolation_points = 0;  // < 2 disables the base-pair and fused-to-base curves
  DatasetSpec dataset;
  SplitSpec split;
  ModelSpecConfig model;
  TrainConfig train;
  KdSettings kd;
  std::vector<NamedFusion> fusions;
};

RunManifest parse_manifest(const ConfigFile& file);

/// Deterministic per-purpose seed derived from a run seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// `count` indices drawn without replacement (seeded shuffle) from `pool`;
/// the whole pool when it is smaller than count.
std::vector<std::size_t> fusion_batch(std::span<const std::size_t> pool, int count, std::uint64_t seed);

/// Per-level scores of one model on the fusion batch, true labels as targets.
std::vector<ImportanceVector> compute_scores(const Model& model, const Partition& partition, ScoreKind kind,
                                             const Dataset& batch, int model_id, int conductance_steps);

/// Parses a score CSV (model_id,level,neuron,score) into per-model,
/// per-level vectors.
std::vector<std::vector<ImportanceVector>> scores_from_csv(const std::string& text);

Partition partition_for(const Model& model, Boundary boundary);

/// Output root: $NIMF_OUT_DIR when set, otherwise `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);
/// Relative paths are placed under $NIMF_OUT_DIR when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct SeedArtifacts {
  SeedResult result;
  std::vector<Model> bases;
  std::vector<std::pair<std::string, FusionReport>> fusion_reports;
};

/// split -> train -> scores -> fuse -> eval for one seed. Writes artifacts
/// under `dir` when it is non-empty.
SeedArtifacts run_seed(const RunManifest& manifest, const DataPair& data, std::uint64_t seed,
                       const std::filesystem::path& dir);

/// All seeds plus the comparison report; returns the report. Writes
/// <dir>/seed_<s>/..., <dir>/report.json, <dir>/report.txt and a copy of the
/// manifest text.
ComparisonReport run_experiment(const RunManifest& manifest, const std::string& manifest_text,
                                const std::filesystem::path& dir);

}  // namespace nimf::cli
