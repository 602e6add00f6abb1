#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nimf/data.hpp"
#include "nimf/network.hpp"

namespace nimf {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

/// Adam (beta 0.9/0.999, eps 1e-8) or SGD with optional momentum. Weight
/// decay is decoupled: p -= lr * weight_decay * p after the gradient step.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay, double momentum = 0.0);

  /// Updates params[i] with grads[i]; state is keyed by position, so the
  /// same parameter list must be passed on every call.
  void step(std::span<AffineParams> params, std::span<const AffineGrad> grads, double lr);

 private:
  OptimizerKind kind_;
  double weight_decay_;
  double momentum_;
  long step_ = 0;
  std::vector<AffineGrad> m_;
  std::vector<AffineGrad> v_;
};

/// Views of every affine layer in `layers`.
std::vector<AffineParams> affine_params(std::vector<Layer>& layers);
std::vector<AffineParams> affine_params(Model& model);

/// Gradients of the affine layers only, in layer order.
std::vector<AffineGrad> affine_grads(const Gradients& g);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double min_lr = 1e-5;
  int warmup_epochs = 5;
  int epochs = 30;
  int batch_size = 128;
  double weight_decay = 0.0;
  double label_smoothing = 0.1;
  double momentum = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear warmup lr * (epoch + 1) / warmup for epoch < warmup, then cosine
/// decay from lr to min_lr over the remaining epochs.
double scheduled_lr(const TrainConfig& cfg, int epoch);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;  // NaN when no validation set was given
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* validation = nullptr);

/// Warm-started training of a fused model; same contract as train().
TrainResult finetune(Model fused, const Dataset& data, const TrainConfig& cfg, const Dataset* validation = nullptr);

std::string training_log_csv(std::span<const EpochLog> log);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy
};

Matrix softmax(const Matrix& logits);

/// Argmax of each row, lowest index on ties.
std::vector<int> predict_classes(const Matrix& scores);

Evaluation evaluate_logits(const Matrix& logits, std::span<const int> labels);
Evaluation evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels);
Evaluation evaluate(const Model& model, const Dataset& data);

/// Mean label-smoothed cross-entropy; fills `grad` (d loss / d logits) when
/// non-null. Smoothed targets are (1 - e) onehot + e / C.
double cross_entropy(const Matrix& logits, std::span<const int> labels, double smoothing, Matrix* grad = nullptr);

}  // namespace nimf
