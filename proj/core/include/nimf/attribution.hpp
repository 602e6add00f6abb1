#pragma once

// Per-neuron importance scores for one level of one model.
//
// Conductance and DeepLIFT attribute the target logit of every sample to the
// outputs of a single layer (the level boundary). Per-sample attributions are
// exposed for axiom checks; the ImportanceVector aggregates them as the batch
// mean of absolute values.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nimf/network.hpp"

namespace nimf {

/// Scores below this value are raised to it before entering weighted means.
inline constexpr double kScoreFloor = 1e-12;

enum class ScoreKind { uniform, conductance, deeplift };

const char* to_string(ScoreKind k);
ScoreKind parse_score_kind(const std::string& s);

class ImportanceVector {
 public:
  ImportanceVector() = default;
  /// Requires finite, nonnegative scores.
  ImportanceVector(std::size_t level, int model_id, Vector scores);

  std::size_t level() const { return level_; }
  int model_id() const { return model_id_; }
  const Vector& scores() const { return scores_; }
  Eigen::Index size() const { return scores_.size(); }

  /// Copy with every score raised to at least `floor`.
  Vector floored(double floor = kScoreFloor) const;

 private:
  std::size_t level_ = 0;
  int model_id_ = 0;
  Vector scores_;
};

ImportanceVector uniform_scores(Eigen::Index width, std::size_t level = 0, int model_id = 0);

/// Which layer output is attributed: a layer index, or the model input.
using Tap = std::optional<std::size_t>;

/// B x width matrix of per-sample conductances of the tapped layer's neurons
/// toward logit targets[m]. Riemann sum over alpha = t/steps, t = 1..steps,
/// of grad_z F(x(alpha_t)) * (z(x(alpha_t)) - z(x(alpha_{t-1}))).
Matrix conductance_per_sample(const Model& model, Tap tap, const Matrix& inputs, const Matrix& baseline,
                              std::span<const int> targets, int steps);

/// B x width DeepLIFT (Rescale rule) contributions of the tapped layer's
/// outputs to F_target(x) - F_target(baseline).
Matrix deeplift_per_sample(const Model& model, Tap tap, const Matrix& inputs, const Matrix& baseline,
                           std::span<const int> targets);

/// Mean of absolute per-sample conductances for the neurons of `level`.
/// An empty `baseline` means the zero vector.
ImportanceVector conductance_scores(const Model& model, const Partition& partition, std::size_t level,
                                    const Matrix& inputs, const Matrix& baseline, std::span<const int> targets,
                                    int steps, int model_id = 0);

ImportanceVector deeplift_scores(const Model& model, const Partition& partition, std::size_t level,
                                 const Matrix& inputs, const Matrix& baseline, std::span<const int> targets,
                                 int model_id = 0);

/// Scores for every level of `model` with the requested scorer.
std::vector<ImportanceVector> score_levels(const Model& model, const Partition& partition, ScoreKind kind,
                                           const Matrix& inputs, std::span<const int> targets, int model_id = 0,
                                           int conductance_steps = 64);

/// CSV with header model_id,level,neuron,score.
std::string scores_to_csv(std::span<const ImportanceVector> scores);

}  // namespace nimf
