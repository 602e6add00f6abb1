#include "nimf/attribution.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nimf {

const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::uniform:
      return "uniform";
    case ScoreKind::conductance:
      return "conductance";
    case ScoreKind::deeplift:
      return "deeplift";
  }
  return "unknown";
}

ScoreKind parse_score_kind(const std::string& s) {
  if (s == "uniform") return ScoreKind::uniform;
  if (s == "conductance") return ScoreKind::conductance;
  if (s == "deeplift") return ScoreKind::deeplift;
  throw std::invalid_argument("unknown score kind '" + s + "'");
}

ImportanceVector::ImportanceVector(std::size_t level, int model_id, Vector scores)
    : level_(level), model_id_(model_id), scores_(std::move(scores)) {
  if (scores_.size() == 0) throw std::invalid_argument("ImportanceVector: empty score vector");
  for (Eigen::Index j = 0; j < scores_.size(); ++j) {
    if (!std::isfinite(scores_(j)) || scores_(j) < 0.0) {
      throw std::invalid_argument("ImportanceVector: score " + std::to_string(j) + " is negative or non-finite");
    }
  }
}

Vector ImportanceVector::floored(double floor) const { return scores_.cwiseMax(floor); }

ImportanceVector uniform_scores(Eigen::Index width, std::size_t level, int model_id) {
  if (width <= 0) throw std::invalid_argument("uniform_scores: width must be >= 1");
  return ImportanceVector(level, model_id, Vector::Constant(width, 1.0 / static_cast<double>(width)));
}

namespace {

Matrix resolve_baseline(const Matrix& inputs, const Matrix& baseline) {
  if (baseline.size() == 0) return Matrix::Zero(inputs.rows(), inputs.cols());
  if (baseline.cols() != inputs.cols()) throw std::invalid_argument("attribution: baseline width mismatch");
  if (baseline.rows() == inputs.rows()) return baseline;
  if (baseline.rows() == 1) return baseline.replicate(inputs.rows(), 1);
  throw std::invalid_argument("attribution: baseline must have 1 or B rows");
}

Matrix target_selector(const Model& model, std::span<const int> targets, Eigen::Index batch) {
  if (static_cast<Eigen::Index>(targets.size()) != batch) {
    throw std::invalid_argument("attribution: need one target per sample");
  }
  Matrix sel = Matrix::Zero(batch, model.output_dim());
  for (Eigen::Index m = 0; m < batch; ++m) {
    const int t = targets[static_cast<std::size_t>(m)];
    if (t < 0 || t >= model.output_dim()) throw std::invalid_argument("attribution: target class out of range");
    sel(m, t) = 1.0;
  }
  return sel;
}

void check_tap(const Model& model, Tap tap) {
  if (tap && *tap >= model.layer_count()) throw std::invalid_argument("attribution: tap layer out of range");
}

const Matrix& tapped(const std::vector<Matrix>& trace, const Matrix& input, Tap tap) {
  return tap ? trace[*tap] : input;
}

}  // namespace

Matrix conductance_per_sample(const Model& model, Tap tap, const Matrix& inputs, const Matrix& baseline,
                              std::span<const int> targets, int steps) {
  if (steps < 1) throw std::invalid_argument("conductance: steps must be >= 1");
  check_tap(model, tap);
  require_finite(inputs, "conductance inputs");
  const Matrix base = resolve_baseline(inputs, baseline);
  const Matrix upstream = target_selector(model, targets, inputs.rows());
  const Matrix delta = inputs - base;

  Matrix previous = tapped(forward_trace(model.layers(), base), base, tap);
  Matrix total = Matrix::Zero(previous.rows(), previous.cols());
  for (int t = 1; t <= steps; ++t) {
    const double alpha = static_cast<double>(t) / steps;
    const Matrix x = base + alpha * delta;
    const Gradients g = backward(model, x, upstream);
    Matrix z = tap ? forward_trace(model.layers(), x)[*tap] : x;
    const Matrix& grad = tap ? g.layer_outputs[*tap] : g.input;
    total += grad.cwiseProduct(z - previous);
    previous = std::move(z);
  }
  return total;
}

Matrix deeplift_per_sample(const Model& model, Tap tap, const Matrix& inputs, const Matrix& baseline,
                           std::span<const int> targets) {
  check_tap(model, tap);
  require_finite(inputs, "deeplift inputs");
  const Matrix base = resolve_baseline(inputs, baseline);
  Matrix multipliers = target_selector(model, targets, inputs.rows());
  const auto trace_x = forward_trace(model.layers(), inputs);
  const auto trace_r = forward_trace(model.layers(), base);

  const std::size_t stop = tap ? *tap + 1 : 0;
  for (std::size_t i = model.layer_count(); i-- > stop;) {
    const Layer& layer = model.layers()[i];
    if (const auto* a = std::get_if<AffineLayer>(&layer)) {
      multipliers = multipliers * a->weight;
      continue;
    }
    const auto fn = std::get<ActivationLayer>(layer).fn;
    if (fn == Activation::identity) continue;
    if (fn != Activation::relu) throw std::invalid_argument("deeplift: unsupported activation");
    const Matrix& in_x = i == 0 ? inputs : trace_x[i - 1];
    const Matrix& in_r = i == 0 ? base : trace_r[i - 1];
    for (Eigen::Index c = 0; c < in_x.cols(); ++c) {
      for (Eigen::Index m = 0; m < in_x.rows(); ++m) {
        const double dx = in_x(m, c) - in_r(m, c);
        double slope;
        if (std::abs(dx) > 1e-12) {
          slope = (std::max(in_x(m, c), 0.0) - std::max(in_r(m, c), 0.0)) / dx;
        } else {
          slope = in_x(m, c) > 0.0 ? 1.0 : 0.0;
        }
        multipliers(m, c) *= slope;
      }
    }
  }
  const Matrix& zx = tapped(trace_x, inputs, tap);
  const Matrix& zr = tapped(trace_r, base, tap);
  return multipliers.cwiseProduct(zx - zr);
}

namespace {

ImportanceVector aggregate(const Matrix& per_sample, std::size_t level, int model_id) {
  Vector s = per_sample.cwiseAbs().colwise().mean().transpose();
  return ImportanceVector(level, model_id, std::move(s));
}

}  // namespace

ImportanceVector conductance_scores(const Model& model, const Partition& partition, std::size_t level,
                                    const Matrix& inputs, const Matrix& baseline, std::span<const int> targets,
                                    int steps, int model_id) {
  validate_partition(model, partition);
  const Tap tap = partition.boundaries.at(level);
  return aggregate(conductance_per_sample(model, tap, inputs, baseline, targets, steps), level, model_id);
}

ImportanceVector deeplift_scores(const Model& model, const Partition& partition, std::size_t level,
                                 const Matrix& inputs, const Matrix& baseline, std::span<const int> targets,
                                 int model_id) {
  validate_partition(model, partition);
  const Tap tap = partition.boundaries.at(level);
  return aggregate(deeplift_per_sample(model, tap, inputs, baseline, targets), level, model_id);
}

std::vector<ImportanceVector> score_levels(const Model& model, const Partition& partition, ScoreKind kind,
                                           const Matrix& inputs, std::span<const int> targets, int model_id,
                                           int conductance_steps) {
  validate_partition(model, partition);
  std::vector<ImportanceVector> out;
  out.reserve(partition.level_count());
  for (std::size_t level = 0; level < partition.level_count(); ++level) {
    switch (kind) {
      case ScoreKind::uniform:
        out.push_back(uniform_scores(model.layer_width(partition.boundaries[level]), level, model_id));
        break;
      case ScoreKind::conductance:
        out.push_back(conductance_scores(model, partition, level, inputs, Matrix(), targets, conductance_steps,
                                         model_id));
        break;
      case ScoreKind::deeplift:
        out.push_back(deeplift_scores(model, partition, level, inputs, Matrix(), targets, model_id));
        break;
    }
  }
  return out;
}

std::string scores_to_csv(std::span<const ImportanceVector> scores) {
  std::ostringstream os;
  os.precision(17);
  os << "model_id,level,neuron,score\n";
  for (const auto& v : scores) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      os << v.model_id() << ',' << v.level() << ',' << j << ',' << v.scores()(j) << '\n';
    }
  }
  return os.str();
}

}  // namespace nimf
