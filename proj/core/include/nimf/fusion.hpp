#pragma once

// Level-by-level neuron interpolation fusion of MLPs.
//
// For every level the concatenated base outputs are grouped into the fused
// width (Hungarian matching or weighted K-means), cluster targets are formed as
// importance-weighted means, and the fused level is fitted to the targets on
// top of the already fused (frozen) lower levels. The Linear variants project
// the base outputs onto the column space of [previous fused output | 1] before
// grouping and fit in closed form; the Gradient variant fits by minibatch
// descent on plain MSE.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nimf/attribution.hpp"
#include "nimf/grouping.hpp"
#include "nimf/network.hpp"
#include "nimf/training.hpp"

namespace nimf {

enum class FusionVariant { hf_linear, kf_linear, kf_gradient };
enum class Boundary { preactivation, postactivation };

const char* to_string(FusionVariant v);
FusionVariant parse_variant(const std::string& s);
const char* to_string(Boundary b);
Boundary parse_boundary(const std::string& s);

/// Optimisation settings of the Gradient variant. The last level has its own
/// optimiser, learning rate and epoch count.
struct GradientSettings {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  int epochs = 100;
  OptimizerKind last_optimizer = OptimizerKind::adam;
  double last_lr = 1e-3;
  int last_epochs = 100;
  double weight_decay = 1e-4;
  double perturbation = 1.0;  // Gaussian init noise, std-dev relative to each tensor's RMS
  int batch_size = 32;
  double val_split = 0.1;
  int patience = 20;  // epochs without validation improvement; 0 disables early stopping

  /// Adam 1e-3, 100 epochs, noise 1.0.
  static GradientSettings setting1();
  /// SGD 1e-4, 50 epochs, noise 0.1 (last level Adam 1e-3, 100 epochs).
  static GradientSettings setting2();
};

struct FusionConfig {
  FusionVariant variant = FusionVariant::kf_linear;
  /// Fused width per level; the last entry must equal the output dimension.
  /// Empty means "same widths as the first base model".
  std::vector<Eigen::Index> widths;
  ScoreKind score_kind = ScoreKind::uniform;
  Boundary boundary = Boundary::preactivation;
  MatchCost match_cost = MatchCost::exact;
  KMeansOptions kmeans;
  int local_search_rounds = 0;
  bool normalize_activations = false;  // clustering stage only
  bool normalize_scores = false;       // rescale each model's level scores to sum 1
  bool head_weights = false;
  GradientSettings gradient;
  double rcond = kDefaultRcond;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One model to be fused: its weights, level partition, per-level importance
/// scores and the number of training samples it saw per class.
struct BaseModel {
  Model model;
  Partition partition;
  std::vector<ImportanceVector> scores;
  std::vector<std::size_t> class_counts;
};

struct LevelReport {
  std::size_t level = 0;
  Eigen::Index width = 0;
  double grouping_cost = 0.0;
  double approximation_residual = 0.0;  // ||fused level output - T||_F on the fusion batch
  double representation_cost = 0.0;     // importance-weighted, nearest fused neuron per sample
  double seconds = 0.0;
};

struct FusionReport {
  FusionConfig config;
  std::size_t model_count = 0;
  std::size_t fusion_samples = 0;
  std::vector<LevelReport> levels;
  std::optional<Evaluation> heldout;
  double total_seconds = 0.0;

  std::string to_json() const;
};

struct FusionResult {
  Model model;
  Partition partition;
  FusionReport report;
};

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fuses `bases` using the rows of `fusion_x` as the fusion batch.
/// HF with anything but two equal-width models throws FusionError ("N/A").
FusionResult fuse(std::span<const BaseModel> bases, const Matrix& fusion_x, const FusionConfig& cfg);

// --- Level building blocks ------------------------------------------------------

/// Closed-form affine fit of targets from [X | 1] (minimum-norm least squares).
AffineLayer fit_level_linear(const Matrix& prev_fused_acts, const Matrix& targets, double rcond = kDefaultRcond);

struct LinearLevelFit {
  AffineLayer layer;
  GroupingResult grouping;      // on projected outputs
  Matrix projected;             // P Z
  double residual = 0.0;        // ||[X | 1] W - T||_F
};

/// Projects Z onto col([X | 1]), clusters the projected columns with weighted
/// K-means into k groups and fits the level to the projected centroids.
LinearLevelFit kf_linear_level(const Matrix& bases_z, const Vector& scores, const Matrix& prev_fused_acts, int k,
                               const FusionConfig& cfg);

/// Two-model variant of kf_linear_level using Hungarian matching; bases_z is
/// [Z1 | Z2] with equal widths.
LinearLevelFit hf_linear_level(const Matrix& bases_z, const Vector& scores, const Matrix& prev_fused_acts,
                               const FusionConfig& cfg);

struct GradientFit {
  std::vector<Layer> layers;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch, index 0 = initial weights
  int best_epoch = 0;              // 0 = initial weights kept
};

/// Minimises plain MSE between the level's output on `level_input` and
/// `targets`, starting from `init` (already perturbed). Returns the weights
/// with the best validation loss, or the final weights when val_split is 0.
GradientFit kf_gradient_level(const Matrix& level_input, const Matrix& targets, std::vector<Layer> init,
                              const GradientSettings& settings, bool last_level, std::uint64_t seed);

/// Output-level targets: class c of every model forms cluster c. With
/// head_weights, model m's weight for class c is its class-c sample count,
/// otherwise its importance score of logit c.
GroupingResult output_level_targets(std::span<const Matrix> base_logits, std::span<const Vector> scores,
                                    std::span<const std::vector<std::size_t>> class_counts, bool head_weights);

/// Sum over samples and base neurons of s_j * min_k (zF_k - z_j)^2.
double representation_cost(const Matrix& fused_outputs, const Matrix& base_outputs, const Vector& scores);

/// Representation cost at `level` of a fused model against its bases.
double representation_cost(const Model& fused, const Partition& fused_partition, std::span<const BaseModel> bases,
                           const Matrix& fusion_x, std::size_t level);

/// sum_j s_j ||zF(:, a_j) - z(:, j)||^2 for a fixed assignment.
double assigned_cost(const Matrix& fused_outputs, const Matrix& base_outputs, const Vector& scores,
                     std::span<const int> assignment);

// --- Baselines -------------------------------------------------------------------

/// Elementwise parameter mean. With row_weights[m][a] (one weight per output
/// neuron of the a-th affine layer of model m) each neuron's row of W and b
/// becomes the normalised weighted combination.
Model vanilla_average(std::span<const Model> models, std::span<const std::vector<Vector>> row_weights = {});

/// Mean of per-model softmax outputs.
Matrix ensemble_predict(std::span<const Model> models, const Matrix& x);

struct KdSettings {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

/// Trains only the final affine layer of `init` to minimise
/// KL(ensemble softmax || student softmax) on `x`.
Model last_layer_kd(std::span<const Model> models, Model init, const Matrix& x, const KdSettings& settings);

}  // namespace nimf
