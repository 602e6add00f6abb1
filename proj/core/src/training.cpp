#include "nimf/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace nimf {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

// --- Optimizer -------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double weight_decay, double momentum)
    : kind_(kind), weight_decay_(weight_decay), momentum_(momentum) {}

void Optimizer::step(std::span<AffineParams> params, std::span<const AffineGrad> grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("Optimizer::step: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& g : grads) {
      m_.push_back({Matrix::Zero(g.weight.rows(), g.weight.cols()), Vector::Zero(g.bias.size())});
      v_.push_back({Matrix::Zero(g.weight.rows(), g.weight.cols()), Vector::Zero(g.bias.size())});
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Optimizer::step: parameter list changed");
  ++step_;

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    if (kind_ == OptimizerKind::adam) {
      m_[i].weight = beta1 * m_[i].weight + (1.0 - beta1) * g.weight;
      m_[i].bias = beta1 * m_[i].bias + (1.0 - beta1) * g.bias;
      v_[i].weight = beta2 * v_[i].weight + (1.0 - beta2) * g.weight.cwiseAbs2();
      v_[i].bias = beta2 * v_[i].bias + (1.0 - beta2) * g.bias.cwiseAbs2();
      p.weight.array() -= lr * (m_[i].weight.array() / bc1) / ((v_[i].weight.array() / bc2).sqrt() + eps);
      p.bias.array() -= lr * (m_[i].bias.array() / bc1) / ((v_[i].bias.array() / bc2).sqrt() + eps);
    } else if (momentum_ > 0.0) {
      m_[i].weight = momentum_ * m_[i].weight + g.weight;
      m_[i].bias = momentum_ * m_[i].bias + g.bias;
      p.weight -= lr * m_[i].weight;
      p.bias -= lr * m_[i].bias;
    } else {
      p.weight -= lr * g.weight;
      p.bias -= lr * g.bias;
    }
    if (weight_decay_ > 0.0) {
      p.weight *= 1.0 - lr * weight_decay_;
      p.bias *= 1.0 - lr * weight_decay_;
    }
  }
}

std::vector<AffineParams> affine_params(std::vector<Layer>& layers) {
  std::vector<AffineParams> out;
  for (auto& layer : layers) {
    if (auto* a = std::get_if<AffineLayer>(&layer)) {
      out.push_back({Eigen::Map<Matrix>(a->weight.data(), a->weight.rows(), a->weight.cols()),
                     Eigen::Map<Vector>(a->bias.data(), a->bias.size())});
    }
  }
  return out;
}

std::vector<AffineParams> affine_params(Model& model) {
  std::vector<AffineParams> out;
  for (std::size_t i : model.affine_indices()) out.push_back(model.affine_params(i));
  return out;
}

std::vector<AffineGrad> affine_grads(const Gradients& g) {
  std::vector<AffineGrad> out;
  for (const auto& p : g.params) {
    if (p) out.push_back(*p);
  }
  return out;
}

// --- Losses and evaluation -------------------------------------------------------

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::vector<int> predict_classes(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, double smoothing, Matrix* grad) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  if (grad) grad->resize(n, c);
  double total = 0.0;
  const double off = smoothing / static_cast<double>(c);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    const int y = labels[static_cast<std::size_t>(r)];
    for (Eigen::Index k = 0; k < c; ++k) {
      const double q = off + (k == y ? 1.0 - smoothing : 0.0);
      const double logp = logits(r, k) - lse;
      if (q > 0.0) total -= q * logp;
      if (grad) (*grad)(r, k) = (std::exp(logp) - q) / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

Evaluation evaluate_logits(const Matrix& logits, std::span<const int> labels) {
  Evaluation e;
  const auto pred = predict_classes(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  e.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
  e.loss = cross_entropy(logits, labels, 0.0);
  return e;
}

Evaluation evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels) {
  Evaluation e;
  const auto pred = predict_classes(probabilities);
  std::size_t hits = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == labels[i] ? 1 : 0;
    const double p = probabilities(static_cast<Eigen::Index>(i), labels[i]);
    loss -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  e.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
  e.loss = loss / static_cast<double>(pred.size());
  return e;
}

Evaluation evaluate(const Model& model, const Dataset& data) {
  return evaluate_logits(forward(model, data.features), data.labels);
}

// --- Training --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: lr must be finite and >= 0");
  if (min_lr < 0.0) throw std::invalid_argument("TrainConfig: min_lr must be >= 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (warmup_epochs < 0) throw std::invalid_argument("TrainConfig: warmup_epochs must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("TrainConfig: label_smoothing must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  const int span = cfg.epochs - cfg.warmup_epochs;
  if (span <= 1) return cfg.lr;
  const double progress = static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(span - 1);
  const double floor = std::min(cfg.min_lr, cfg.lr);
  return floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* validation) {
  cfg.validate();
  data.validate();
  if (data.dim() != model.input_dim()) {
    throw std::invalid_argument("train: dataset width " + std::to_string(data.dim()) + " != model input " +
                                std::to_string(model.input_dim()));
  }
  if (data.num_classes > model.output_dim()) throw std::invalid_argument("train: model has fewer outputs than classes");

  std::mt19937_64 rng(cfg.seed);
  Optimizer opt(cfg.optimizer, cfg.weight_decay, cfg.momentum);
  auto params = affine_params(model);
  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> logs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = data.subset(std::span(order).subspan(start, end - start));
      const Matrix logits = forward(model, batch.features);
      Matrix grad;
      const double loss = cross_entropy(logits, batch.labels, cfg.label_smoothing, &grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(end - start);
      const auto pred = predict_classes(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
      const auto grads = affine_grads(backward(model, batch.features, grad));
      opt.step(params, grads, lr);
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
    log.val_acc = validation ? evaluate(model, *validation).accuracy : std::numeric_limits<double>::quiet_NaN();
    logs.push_back(log);
  }
  return TrainResult{std::move(model), std::move(logs)};
}

TrainResult finetune(Model fused, const Dataset& data, const TrainConfig& cfg, const Dataset* validation) {
  return train(std::move(fused), data, cfg, validation);
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,train_loss,train_acc,val_acc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.train_acc << ',';
    if (std::isfinite(e.val_acc)) os << e.val_acc;
    os << '\n';
  }
  return os.str();
}

}  // namespace nimf
