#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nimf/numerics.hpp"

namespace nimf {

class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix features;          // N x d
  std::vector<int> labels;  // N, each in [0, num_classes)
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;

  /// Sample count per class.
  std::vector<std::size_t> class_counts() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]; images are flattened row-major.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Same as load_idx on in-memory buffers.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Gaussian blobs: class centres ~ N(0, 1)^d, samples = centre + spread * N(0, 1)^d.
/// Exactly per_class samples of every class, in shuffled order.
Dataset synthetic_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed);

enum class SplitRegime { dirichlet, sharded };

struct SplitPlan {
  SplitRegime regime = SplitRegime::dirichlet;
  std::uint64_t seed = 0;
  std::map<std::string, double> parameters;
  std::vector<double> alphas;                     // dirichlet only
  std::vector<std::vector<int>> class_sets;       // sharded only
  std::vector<std::vector<std::size_t>> indices;  // per model, ascending

  std::size_t model_count() const { return indices.size(); }
};

/// n evenly spaced concentration parameters from alpha_min to
/// alpha_min / min_max_ratio.
std::vector<double> dirichlet_alphas(double alpha_min, double min_max_ratio, int n_models);

/// Per class, shuffles the class's sample indices and the concentration
/// parameters, draws proportions from Dir(alphas) and hands out contiguous
/// chunks sized by largest-remainder rounding.
SplitPlan dirichlet_split(std::span<const int> labels, int n_models, double alpha_min, double min_max_ratio,
                          std::uint64_t seed);

/// Random permutation of the classes cut into n_models nearly equal groups;
/// each model receives every sample of its classes.
SplitPlan sharded_split(std::span<const int> labels, int num_classes, int n_models, std::uint64_t seed);

/// Throws std::logic_error if the plan's index lists overlap or fall outside
/// [0, n). When `must_cover`, also requires the union to be every index.
void check_split(const SplitPlan& plan, std::size_t n, bool must_cover);

std::string split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(const std::string& text);

}  // namespace nimf
