#pragma once

// Multilayer perceptrons as flat layer sequences, grouped into levels by a
// Partition. Rows of every activation matrix are samples.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "nimf/numerics.hpp"

namespace nimf {

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

const char* to_string(Activation a);

struct AffineLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index out_dim() const { return weight.rows(); }
  Eigen::Index in_dim() const { return weight.cols(); }
};

struct ActivationLayer {
  Activation fn = Activation::relu;
};

using Layer = std::variant<AffineLayer, ActivationLayer>;

inline bool is_affine(const Layer& l) { return std::holds_alternative<AffineLayer>(l); }

/// Mutable view of one affine layer's parameters; shape cannot change.
struct AffineParams {
  Eigen::Map<Matrix> weight;
  Eigen::Map<Vector> bias;
};

class Model {
 public:
  /// Validates the chain: adjacent widths agree, parameters are finite and
  /// the last layer is affine.
  explicit Model(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index output_dim() const { return output_dim_; }

  /// Width of the output of layer `index`.
  Eigen::Index layer_width(std::size_t index) const;

  const AffineLayer& affine(std::size_t index) const;
  AffineParams affine_params(std::size_t index);

  /// Indices of affine layers in order.
  std::vector<std::size_t> affine_indices() const;

  std::size_t parameter_count() const;

 private:
  std::vector<Layer> layers_;
  Eigen::Index input_dim_ = 0;
  Eigen::Index output_dim_ = 0;
};

bool same_architecture(const Model& a, const Model& b);

/// Strictly increasing layer indices; level i consists of the layers
/// (boundaries[i-1], boundaries[i]] and its output is read after layer
/// boundaries[i]. The last boundary is the final (logit) layer.
struct Partition {
  std::vector<std::size_t> boundaries;

  std::size_t level_count() const { return boundaries.size(); }
  /// Half-open layer range [first, last) of level `level`.
  std::pair<std::size_t, std::size_t> level_range(std::size_t level) const;

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Throws std::invalid_argument unless `p` is valid for `m`.
void validate_partition(const Model& m, const Partition& p);

/// Boundary after every affine layer (preactivations).
Partition preactivation_partition(const Model& m);

/// Boundary after the activation following each hidden affine layer, and
/// after the final affine layer.
Partition postactivation_partition(const Model& m);

/// True when every boundary sits immediately after an affine layer.
bool is_preactivation_partition(const Model& m, const Partition& p);

struct ActivationBundle {
  int model_id = 0;
  std::vector<Matrix> levels;  // B x width per level
};

Matrix apply_layer(const Layer& layer, const Matrix& input);

/// Output of every layer of `layers` applied to `x`, in order.
std::vector<Matrix> forward_trace(std::span<const Layer> layers, const Matrix& x);

Matrix forward(const Model& model, const Matrix& x);

ActivationBundle forward_collect(const Model& model, const Matrix& x, const Partition& partition,
                                 int model_id = 0);

struct AffineGrad {
  Matrix weight;
  Vector bias;
};

/// Reverse-mode gradients of sum_m <upstream_m, output_m>.
struct Gradients {
  std::vector<std::optional<AffineGrad>> params;  // one slot per layer
  Matrix input;                                   // B x input width
  std::vector<Matrix> layer_outputs;              // gradient w.r.t. each layer's output
};

Gradients backward_layers(std::span<const Layer> layers, const Matrix& x, const Matrix& upstream);

Gradients backward(const Model& model, const Matrix& x, const Matrix& upstream);

/// Fully connected relu (or identity) network with PyTorch-style uniform
/// initialisation U(-1/sqrt(in), 1/sqrt(in)).
Model make_mlp(Eigen::Index input_dim, std::span<const Eigen::Index> hidden, Eigen::Index output_dim,
               std::uint64_t seed, Activation activation = Activation::relu);

/// (1 - lambda) * a + lambda * b over all parameters.
Model interpolate(const Model& a, const Model& b, double lambda);

// --- NIMF model file -------------------------------------------------------

class ModelFormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, malformed };

  ModelFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint16_t kModelFormatVersion = 1;

struct StoredModel {
  Model model;
  Partition partition;
};

std::vector<std::uint8_t> serialize(const Model& model, const Partition& partition);
StoredModel deserialize(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const Model& model, const Partition& partition);
StoredModel load_model(const std::filesystem::path& path);

}  // namespace nimf
