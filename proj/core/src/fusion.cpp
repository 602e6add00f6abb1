#include "nimf/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"

namespace nimf {

const char* to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::hf_linear:
      return "hf_linear";
    case FusionVariant::kf_linear:
      return "kf_linear";
    case FusionVariant::kf_gradient:
      return "kf_gradient";
  }
  return "unknown";
}

FusionVariant parse_variant(const std::string& s) {
  if (s == "hf_linear") return FusionVariant::hf_linear;
  if (s == "kf_linear") return FusionVariant::kf_linear;
  if (s == "kf_gradient") return FusionVariant::kf_gradient;
  throw std::invalid_argument("unknown fusion variant '" + s + "'");
}

const char* to_string(Boundary b) { return b == Boundary::preactivation ? "preactivation" : "postactivation"; }

Boundary parse_boundary(const std::string& s) {
  if (s == "preactivation") return Boundary::preactivation;
  if (s == "postactivation") return Boundary::postactivation;
  throw std::invalid_argument("unknown boundary '" + s + "'");
}

GradientSettings GradientSettings::setting1() {
  GradientSettings g;
  g.optimizer = OptimizerKind::adam;
  g.lr = 1e-3;
  g.epochs = 100;
  g.last_optimizer = OptimizerKind::adam;
  g.last_lr = 1e-3;
  g.last_epochs = 100;
  g.weight_decay = 1e-4;
  g.perturbation = 1.0;
  g.batch_size = 32;
  g.val_split = 0.1;
  return g;
}

GradientSettings GradientSettings::setting2() {
  GradientSettings g = setting1();
  g.optimizer = OptimizerKind::sgd;
  g.lr = 1e-4;
  g.epochs = 50;
  g.perturbation = 0.1;
  return g;
}

void FusionConfig::validate() const {
  for (Eigen::Index w : widths) {
    if (w < 1) throw std::invalid_argument("FusionConfig: fused widths must be positive");
  }
  const auto& g = gradient;
  if (g.perturbation < 0.0) throw std::invalid_argument("FusionConfig: perturbation must be >= 0");
  if (!(g.val_split >= 0.0 && g.val_split < 1.0)) throw std::invalid_argument("FusionConfig: val_split must be in [0, 1)");
  if (g.batch_size < 1) throw std::invalid_argument("FusionConfig: batch_size must be >= 1");
  if (g.epochs < 0 || g.last_epochs < 0) throw std::invalid_argument("FusionConfig: epochs must be >= 0");
  if (g.lr < 0.0 || g.last_lr < 0.0) throw std::invalid_argument("FusionConfig: learning rates must be >= 0");
  if (g.weight_decay < 0.0) throw std::invalid_argument("FusionConfig: weight_decay must be >= 0");
  if (g.patience < 0) throw std::invalid_argument("FusionConfig: patience must be >= 0");
  if (local_search_rounds < 0) throw std::invalid_argument("FusionConfig: local_search_rounds must be >= 0");
  if (kmeans.restarts < 1 || kmeans.max_iters < 1) {
    throw std::invalid_argument("FusionConfig: kmeans restarts and max_iters must be >= 1");
  }
  if (!(rcond > 0.0 && rcond < 1.0)) throw std::invalid_argument("FusionConfig: rcond must be in (0, 1)");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix hcat(std::span<const Matrix> blocks) {
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  Matrix out(blocks.empty() ? 0 : blocks.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

Vector vcat(std::span<const Vector> parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Vector out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

Matrix rows_of(const Matrix& m, std::span<const Eigen::Index> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Matrix apply_layers(std::span<const Layer> layers, const Matrix& x) {
  Matrix cur = x;
  for (const auto& l : layers) cur = apply_layer(l, cur);
  return cur;
}

// Layers of `level` in model order.
std::vector<Layer> level_layers(const Model& m, const Partition& p, std::size_t level) {
  const auto [first, last] = p.level_range(level);
  return {m.layers().begin() + static_cast<std::ptrdiff_t>(first),
          m.layers().begin() + static_cast<std::ptrdiff_t>(last)};
}

std::size_t affine_position(const std::vector<Layer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (is_affine(layers[i])) return i;
  }
  return layers.size();
}

// Activation signature of a level: position of the affine layer and the
// activation kinds around it.
std::vector<int> level_signature(const std::vector<Layer>& layers) {
  std::vector<int> sig;
  for (const auto& l : layers) {
    sig.push_back(is_affine(l) ? -1 : static_cast<int>(std::get<ActivationLayer>(l).fn));
  }
  return sig;
}

struct LevelPlan {
  std::size_t level_count = 0;
  std::vector<Eigen::Index> widths;
};

LevelPlan check_bases(std::span<const BaseModel> bases, const FusionConfig& cfg) {
  if (bases.empty()) throw FusionError("fuse: no base models");
  LevelPlan plan;
  const BaseModel& first = bases.front();
  plan.level_count = first.partition.level_count();
  for (std::size_t m = 0; m < bases.size(); ++m) {
    const auto& b = bases[m];
    validate_partition(b.model, b.partition);
    if (b.partition.level_count() != plan.level_count) {
      throw FusionError("fuse: level-count mismatch (model " + std::to_string(m) + " has " +
                        std::to_string(b.partition.level_count()) + " levels, expected " +
                        std::to_string(plan.level_count) + ")");
    }
    if (b.model.input_dim() != first.model.input_dim()) throw FusionError("fuse: input dimension mismatch");
    if (b.model.output_dim() != first.model.output_dim()) throw FusionError("fuse: output_dim mismatch");
    if (b.scores.size() != plan.level_count) {
      throw FusionError("fuse: model " + std::to_string(m) + " has scores for " + std::to_string(b.scores.size()) +
                        " levels, expected " + std::to_string(plan.level_count));
    }
    if (cfg.head_weights && b.class_counts.size() != static_cast<std::size_t>(b.model.output_dim())) {
      throw FusionError("fuse: head_weights requires per-class sample counts for every model");
    }
    if (cfg.variant != FusionVariant::kf_gradient && !is_preactivation_partition(b.model, b.partition)) {
      throw FusionError("fuse: linear variants require level boundaries at preactivations");
    }
    for (std::size_t i = 0; i < plan.level_count; ++i) {
      const auto layers = level_layers(b.model, b.partition, i);
      if (std::count_if(layers.begin(), layers.end(), [](const Layer& l) { return is_affine(l); }) != 1) {
        throw FusionError("fuse: level " + std::to_string(i) + " of model " + std::to_string(m) +
                          " must contain exactly one affine layer");
      }
      if (level_signature(layers) != level_signature(level_layers(first.model, first.partition, i))) {
        throw FusionError("fuse: level " + std::to_string(i) + " of model " + std::to_string(m) +
                          " has a different layer structure");
      }
      const Eigen::Index width = b.model.layer_width(b.partition.boundaries[i]);
      if (b.scores[i].size() != width) {
        throw FusionError("fuse: score width mismatch at level " + std::to_string(i) + " of model " +
                          std::to_string(m));
      }
    }
  }

  if (cfg.widths.empty()) {
    for (std::size_t b : first.partition.boundaries) plan.widths.push_back(first.model.layer_width(b));
  } else {
    plan.widths = cfg.widths;
  }
  if (plan.widths.size() != plan.level_count) {
    throw FusionError("fuse: " + std::to_string(plan.widths.size()) + " fused widths given for " +
                      std::to_string(plan.level_count) + " levels");
  }
  if (plan.widths.back() != first.model.output_dim()) {
    throw FusionError("fuse: last fused width must equal output_dim");
  }

  if (cfg.variant == FusionVariant::hf_linear) {
    if (bases.size() != 2) {
      throw FusionError("fuse: N/A - Hungarian fusion needs exactly 2 models, got " + std::to_string(bases.size()));
    }
    for (std::size_t i = 0; i + 1 < plan.level_count; ++i) {
      const Eigen::Index w0 = bases[0].model.layer_width(bases[0].partition.boundaries[i]);
      const Eigen::Index w1 = bases[1].model.layer_width(bases[1].partition.boundaries[i]);
      if (w0 != w1 || plan.widths[i] != w0) {
        throw FusionError("fuse: N/A - Hungarian fusion needs equal widths at level " + std::to_string(i));
      }
    }
  }
  return plan;
}

Vector prepared_scores(const ImportanceVector& v, bool normalize) {
  Vector s = v.floored();
  if (normalize) s /= s.sum();
  return s;
}

GroupingResult cluster_level(const Matrix& z, const Vector& s, int k, const FusionConfig& cfg, std::uint64_t seed) {
  KMeansOptions opts = cfg.kmeans;
  opts.seed = seed;
  opts.normalize = cfg.normalize_activations;
  const Matrix points = z.transpose();
  GroupingResult g = weighted_kmeans(points, s, k, opts);
  if (cfg.local_search_rounds > 0) g = local_search_refine(g, points, s, cfg.local_search_rounds);
  return g;
}

std::uint64_t level_seed(std::uint64_t seed, std::size_t level) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (level + 1);
}

// Fused neuron k of the level is initialised from one neuron of the init
// model: its highest-scoring member of cluster k, or the init-model neuron
// closest to the target when the cluster has no member from that model.
std::vector<Eigen::Index> init_row_map(const GroupingResult& g, const Matrix& z, const Vector& s, Eigen::Index offset,
                                       Eigen::Index width) {
  const int k = g.cluster_count();
  std::vector<Eigen::Index> map(static_cast<std::size_t>(k), -1);
  std::vector<double> best(static_cast<std::size_t>(k), -1.0);
  for (Eigen::Index j = offset; j < offset + width; ++j) {
    const auto c = static_cast<std::size_t>(g.assignment[static_cast<std::size_t>(j)]);
    if (s(j) > best[c]) {
      best[c] = s(j);
      map[c] = j - offset;
    }
  }
  for (int c = 0; c < k; ++c) {
    if (map[static_cast<std::size_t>(c)] >= 0) continue;
    double nearest = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = offset; j < offset + width; ++j) {
      const double d = (z.col(j) - g.targets.col(c)).squaredNorm();
      if (d < nearest) {
        nearest = d;
        map[static_cast<std::size_t>(c)] = j - offset;
      }
    }
  }
  return map;
}

std::vector<Layer> initial_level(const std::vector<Layer>& base_level, std::span<const Eigen::Index> rows,
                                 std::span<const Eigen::Index> cols, double noise, std::mt19937_64& rng) {
  std::vector<Layer> out = base_level;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& layer : out) {
    auto* a = std::get_if<AffineLayer>(&layer);
    if (a == nullptr) continue;
    AffineLayer mapped{Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size())),
                       Vector(static_cast<Eigen::Index>(rows.size()))};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        mapped.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a->weight(rows[r], cols[c]);
      }
      mapped.bias(static_cast<Eigen::Index>(r)) = a->bias(rows[r]);
    }
    if (noise > 0.0) {
      // Noise is relative to the tensor's RMS so that one epsilon suits any weight scale.
      const double w_rms = std::sqrt(mapped.weight.squaredNorm() / static_cast<double>(mapped.weight.size()));
      const double b_norm = mapped.bias.size() > 0 ? std::sqrt(mapped.bias.squaredNorm() / mapped.bias.size()) : 0.0;
      const double b_rms = b_norm > 0.0 ? b_norm : w_rms;
      for (Eigen::Index i = 0; i < mapped.weight.size(); ++i) mapped.weight.data()[i] += noise * w_rms * gauss(rng);
      for (Eigen::Index i = 0; i < mapped.bias.size(); ++i) mapped.bias(i) += noise * b_rms * gauss(rng);
    }
    *a = std::move(mapped);
  }
  return out;
}

}  // namespace

// --- Level building blocks ------------------------------------------------------

AffineLayer fit_level_linear(const Matrix& prev_fused_acts, const Matrix& targets, double rcond) {
  if (prev_fused_acts.rows() != targets.rows()) {
    throw std::invalid_argument("fit_level_linear: shape mismatch X " + shape_string(prev_fused_acts) + ", T " +
                                shape_string(targets));
  }
  const Matrix xb = with_bias_column(prev_fused_acts);
  const Matrix w = weighted_least_squares(xb, DiagWeights::uniform(xb.rows()), targets, rcond);
  const Eigen::Index p = prev_fused_acts.cols();
  return AffineLayer{w.topRows(p).transpose(), w.row(p).transpose()};
}

namespace {

LinearLevelFit finish_linear(GroupingResult grouping, Matrix projected, const Matrix& prev_fused_acts, double rcond) {
  LinearLevelFit fit{fit_level_linear(prev_fused_acts, grouping.targets, rcond), std::move(grouping),
                     std::move(projected), 0.0};
  const Matrix out = apply_layer(fit.layer, prev_fused_acts);
  fit.residual = (out - fit.grouping.targets).norm();
  return fit;
}

}  // namespace

LinearLevelFit kf_linear_level(const Matrix& bases_z, const Vector& scores, const Matrix& prev_fused_acts, int k,
                               const FusionConfig& cfg) {
  Matrix projected = project_columnspace(with_bias_column(prev_fused_acts), bases_z, cfg.rcond);
  GroupingResult g = cluster_level(projected, scores, k, cfg, cfg.kmeans.seed);
  return finish_linear(std::move(g), std::move(projected), prev_fused_acts, cfg.rcond);
}

LinearLevelFit hf_linear_level(const Matrix& bases_z, const Vector& scores, const Matrix& prev_fused_acts,
                               const FusionConfig& cfg) {
  if (bases_z.cols() % 2 != 0 || scores.size() != bases_z.cols()) {
    throw std::invalid_argument("hf_linear_level: expects [Z1 | Z2] with equal widths");
  }
  const Eigen::Index d = bases_z.cols() / 2;
  Matrix projected = project_columnspace(with_bias_column(prev_fused_acts), bases_z, cfg.rcond);
  GroupingResult g = hungarian_grouping(projected.leftCols(d), scores.head(d), projected.rightCols(d),
                                        scores.tail(d), cfg.match_cost);
  return finish_linear(std::move(g), std::move(projected), prev_fused_acts, cfg.rcond);
}

GradientFit kf_gradient_level(const Matrix& level_input, const Matrix& targets, std::vector<Layer> init,
                              const GradientSettings& settings, bool last_level, std::uint64_t seed) {
  if (level_input.rows() != targets.rows()) throw std::invalid_argument("kf_gradient_level: batch size mismatch");
  const Eigen::Index n = level_input.rows();
  std::mt19937_64 rng(seed);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::Index n_val = 0;
  if (settings.val_split > 0.0 && n >= 2) {
    n_val = std::clamp<Eigen::Index>(std::llround(settings.val_split * static_cast<double>(n)), 1, n - 1);
  }
  const std::vector<Eigen::Index> val_idx(order.begin(), order.begin() + n_val);
  std::vector<Eigen::Index> train_idx(order.begin() + n_val, order.end());
  const Matrix x_val = rows_of(level_input, val_idx);
  const Matrix t_val = rows_of(targets, val_idx);

  auto mse = [](const std::vector<Layer>& layers, const Matrix& x, const Matrix& t) {
    return (apply_layers(layers, x) - t).squaredNorm() / static_cast<double>(t.size());
  };

  GradientFit fit;
  fit.layers = std::move(init);
  const Matrix init_out = apply_layers(fit.layers, level_input);
  if (init_out.cols() != targets.cols()) throw std::invalid_argument("kf_gradient_level: level width != target width");

  const OptimizerKind kind = last_level ? settings.last_optimizer : settings.optimizer;
  const double lr = last_level ? settings.last_lr : settings.lr;
  const int epochs = last_level ? settings.last_epochs : settings.epochs;

  std::vector<Layer> layers = fit.layers;
  auto params = affine_params(layers);
  Optimizer opt(kind, settings.weight_decay);
  double best_val = n_val > 0 ? mse(layers, x_val, t_val) : std::numeric_limits<double>::infinity();
  if (n_val > 0) fit.val_loss.push_back(best_val);
  int since_best = 0;

  const auto batch = static_cast<std::size_t>(settings.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch) {
      const std::size_t end = std::min(train_idx.size(), start + batch);
      const std::span<const Eigen::Index> idx(train_idx.data() + start, end - start);
      const Matrix xb = rows_of(level_input, idx);
      const Matrix tb = rows_of(targets, idx);
      const Matrix diff = apply_layers(layers, xb) - tb;
      const double denom = static_cast<double>(diff.size());
      const double loss = diff.squaredNorm() / denom;
      if (!std::isfinite(loss)) {
        throw TrainingError("kf_gradient_level: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(end - start);
      const Gradients g = backward_layers(layers, xb, (2.0 / denom) * diff);
      opt.step(params, affine_grads(g), lr);
    }
    fit.train_loss.push_back(train_idx.empty() ? 0.0 : loss_sum / static_cast<double>(train_idx.size()));
    if (n_val == 0) continue;
    const double v = mse(layers, x_val, t_val);
    if (!std::isfinite(v)) throw TrainingError("kf_gradient_level: non-finite loss at epoch " + std::to_string(epoch));
    fit.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      fit.layers = layers;
      fit.best_epoch = epoch;
      since_best = 0;
    } else if (settings.patience > 0 && ++since_best >= settings.patience) {
      break;
    }
  }
  if (n_val == 0) {
    fit.layers = std::move(layers);
    fit.best_epoch = static_cast<int>(fit.train_loss.size());
  }
  return fit;
}

GroupingResult output_level_targets(std::span<const Matrix> base_logits, std::span<const Vector> scores,
                                    std::span<const std::vector<std::size_t>> class_counts, bool head_weights) {
  if (base_logits.empty()) throw std::invalid_argument("output_level_targets: no models");
  const Eigen::Index classes = base_logits.front().cols();
  const std::size_t n = base_logits.size();
  for (const auto& z : base_logits) {
    if (z.cols() != classes || z.rows() != base_logits.front().rows()) {
      throw std::invalid_argument("output_level_targets: output_dim mismatch");
    }
  }
  if (head_weights && class_counts.size() != n) throw std::invalid_argument("output_level_targets: missing class counts");
  if (!head_weights && scores.size() != n) throw std::invalid_argument("output_level_targets: missing scores");

  Matrix w(static_cast<Eigen::Index>(n), classes);
  for (std::size_t m = 0; m < n; ++m) {
    for (Eigen::Index c = 0; c < classes; ++c) {
      const auto mi = static_cast<Eigen::Index>(m);
      if (head_weights) {
        const auto& counts = class_counts[m];
        if (static_cast<Eigen::Index>(counts.size()) != classes) {
          throw std::invalid_argument("output_level_targets: class count length mismatch");
        }
        w(mi, c) = static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        w(mi, c) = scores[m](c);
      }
    }
  }
  for (Eigen::Index c = 0; c < classes; ++c) {
    if (!(w.col(c).sum() > 0.0)) w.col(c).setOnes();
  }

  const Matrix z = hcat(base_logits);
  Vector s(z.cols());
  std::vector<int> assignment(static_cast<std::size_t>(z.cols()));
  for (std::size_t m = 0; m < n; ++m) {
    for (Eigen::Index c = 0; c < classes; ++c) {
      const auto j = static_cast<Eigen::Index>(m) * classes + c;
      s(j) = w(static_cast<Eigen::Index>(m), c);
      assignment[static_cast<std::size_t>(j)] = static_cast<int>(c);
    }
  }
  return make_grouping(z, s, std::move(assignment), static_cast<int>(classes));
}

double representation_cost(const Matrix& fused_outputs, const Matrix& base_outputs, const Vector& scores) {
  if (fused_outputs.rows() != base_outputs.rows() || scores.size() != base_outputs.cols()) {
    throw std::invalid_argument("representation_cost: shape mismatch");
  }
  double total = 0.0;
  for (Eigen::Index m = 0; m < base_outputs.rows(); ++m) {
    for (Eigen::Index j = 0; j < base_outputs.cols(); ++j) {
      const double nearest = (fused_outputs.row(m).array() - base_outputs(m, j)).square().minCoeff();
      total += scores(j) * nearest;
    }
  }
  return total;
}

double representation_cost(const Model& fused, const Partition& fused_partition, std::span<const BaseModel> bases,
                           const Matrix& fusion_x, std::size_t level) {
  const Matrix zf = forward_collect(fused, fusion_x, fused_partition).levels.at(level);
  std::vector<Matrix> zs;
  std::vector<Vector> ss;
  for (const auto& b : bases) {
    zs.push_back(forward_collect(b.model, fusion_x, b.partition).levels.at(level));
    ss.push_back(b.scores.at(level).floored());
  }
  return representation_cost(zf, hcat(zs), vcat(ss));
}

double assigned_cost(const Matrix& fused_outputs, const Matrix& base_outputs, const Vector& scores,
                     std::span<const int> assignment) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < base_outputs.cols(); ++j) {
    total += scores(j) * (fused_outputs.col(assignment[static_cast<std::size_t>(j)]) - base_outputs.col(j)).squaredNorm();
  }
  return total;
}

// --- fuse ------------------------------------------------------------------------

FusionResult fuse(std::span<const BaseModel> bases, const Matrix& fusion_x, const FusionConfig& cfg) {
  const auto t_start = Clock::now();
  cfg.validate();
  if (fusion_x.rows() < 1) throw FusionError("fuse: empty fusion batch");
  require_finite(fusion_x, "fusion data");
  const LevelPlan plan = check_bases(bases, cfg);
  const bool linear = cfg.variant != FusionVariant::kf_gradient;
  const std::size_t n = bases.size();

  std::vector<ActivationBundle> bundles;
  for (std::size_t m = 0; m < n; ++m) {
    bundles.push_back(forward_collect(bases[m].model, fusion_x, bases[m].partition, static_cast<int>(m)));
  }

  std::mt19937_64 rng(cfg.seed);
  const std::size_t init_model = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::vector<Eigen::Index> prev_map(static_cast<std::size_t>(bases.front().model.input_dim()));
  std::iota(prev_map.begin(), prev_map.end(), 0);

  FusionReport report;
  report.config = cfg;
  report.model_count = n;
  report.fusion_samples = static_cast<std::size_t>(fusion_x.rows());

  std::vector<Layer> fused_layers;
  Partition fused_partition;
  Matrix prev = fusion_x;

  for (std::size_t i = 0; i < plan.level_count; ++i) {
    const auto t_level = Clock::now();
    const bool last = i + 1 == plan.level_count;
    const auto k = static_cast<int>(plan.widths[i]);

    std::vector<Matrix> zs;
    std::vector<Vector> ss;
    std::vector<Eigen::Index> offsets;
    Eigen::Index offset = 0;
    for (std::size_t m = 0; m < n; ++m) {
      zs.push_back(bundles[m].levels[i]);
      ss.push_back(prepared_scores(bases[m].scores[i], cfg.normalize_scores));
      offsets.push_back(offset);
      offset += zs.back().cols();
    }
    const Matrix z = hcat(zs);
    const Vector s = vcat(ss);
    const std::vector<Layer> template_level = level_layers(bases.front().model, bases.front().partition, i);
    const std::size_t affine_at = affine_position(template_level);

    std::vector<Layer> fused_level;
    GroupingResult grouping;
    if (linear) {
      const std::span<const Layer> prefix(template_level.data(), affine_at);
      const Matrix x = apply_layers(prefix, prev);
      const Matrix xb = with_bias_column(x);
      const Matrix projected = project_columnspace(xb, z, cfg.rcond);
      if (last) {
        std::vector<Matrix> pz;
        for (std::size_t m = 0; m < n; ++m) pz.push_back(projected.middleCols(offsets[m], zs[m].cols()));
        std::vector<std::vector<std::size_t>> counts;
        for (const auto& b : bases) counts.push_back(b.class_counts);
        grouping = output_level_targets(pz, ss, counts, cfg.head_weights);
      } else if (cfg.variant == FusionVariant::hf_linear) {
        const Eigen::Index d = zs[0].cols();
        grouping = hungarian_grouping(projected.leftCols(d), ss[0], projected.rightCols(d), ss[1], cfg.match_cost);
      } else {
        grouping = cluster_level(projected, s, k, cfg, level_seed(cfg.kmeans.seed, i));
      }
      fused_level.assign(prefix.begin(), prefix.end());
      fused_level.emplace_back(fit_level_linear(x, grouping.targets, cfg.rcond));
      fused_level.insert(fused_level.end(), template_level.begin() + static_cast<std::ptrdiff_t>(affine_at) + 1,
                         template_level.end());
    } else {
      if (last) {
        std::vector<std::vector<std::size_t>> counts;
        for (const auto& b : bases) counts.push_back(b.class_counts);
        grouping = output_level_targets(zs, ss, counts, cfg.head_weights);
      } else {
        grouping = cluster_level(z, s, k, cfg, level_seed(cfg.kmeans.seed, i));
      }
      std::vector<Eigen::Index> row_map(static_cast<std::size_t>(k));
      if (last) {
        std::iota(row_map.begin(), row_map.end(), 0);
      } else {
        row_map = init_row_map(grouping, z, s, offsets[init_model], zs[init_model].cols());
      }
      const auto& init_base = bases[init_model];
      auto init = initial_level(level_layers(init_base.model, init_base.partition, i), row_map, prev_map,
                                cfg.gradient.perturbation, rng);
      fused_level = kf_gradient_level(prev, grouping.targets, std::move(init), cfg.gradient, last,
                                      level_seed(cfg.seed, i))
                        .layers;
      prev_map = std::move(row_map);
    }

    const Matrix out = apply_layers(fused_level, prev);
    LevelReport lr;
    lr.level = i;
    lr.width = out.cols();
    lr.grouping_cost = grouping.grouping_cost;
    lr.approximation_residual = (out - grouping.targets).norm();
    lr.representation_cost = representation_cost(out, z, s);
    lr.seconds = seconds_since(t_level);
    report.levels.push_back(lr);

    for (auto& l : fused_level) fused_layers.push_back(std::move(l));
    fused_partition.boundaries.push_back(fused_layers.size() - 1);
    prev = out;
  }

  Model fused(std::move(fused_layers));
  report.total_seconds = seconds_since(t_start);
  return FusionResult{std::move(fused), std::move(fused_partition), std::move(report)};
}

// --- Report ----------------------------------------------------------------------

std::string FusionReport::to_json() const {
  nlohmann::json j;
  nlohmann::json c;
  c["variant"] = to_string(config.variant);
  c["widths"] = config.widths;
  c["score_kind"] = to_string(config.score_kind);
  c["boundary"] = to_string(config.boundary);
  c["match_cost"] = to_string(config.match_cost);
  c["kmeans"] = {{"seed", config.kmeans.seed},
                 {"max_iters", config.kmeans.max_iters},
                 {"tol", config.kmeans.tol},
                 {"restarts", config.kmeans.restarts}};
  c["local_search_rounds"] = config.local_search_rounds;
  c["normalize_activations"] = config.normalize_activations;
  c["normalize_scores"] = config.normalize_scores;
  c["head_weights"] = config.head_weights;
  const auto& g = config.gradient;
  c["gradient"] = {{"optimizer", to_string(g.optimizer)},
                   {"lr", g.lr},
                   {"epochs", g.epochs},
                   {"last_optimizer", to_string(g.last_optimizer)},
                   {"last_lr", g.last_lr},
                   {"last_epochs", g.last_epochs},
                   {"weight_decay", g.weight_decay},
                   {"perturbation", g.perturbation},
                   {"batch_size", g.batch_size},
                   {"val_split", g.val_split},
                   {"patience", g.patience}};
  c["rcond"] = config.rcond;
  c["seed"] = config.seed;
  j["config"] = c;
  j["model_count"] = model_count;
  j["fusion_samples"] = fusion_samples;
  j["levels"] = nlohmann::json::array();
  for (const auto& l : levels) {
    j["levels"].push_back({{"level", l.level},
                           {"width", l.width},
                           {"grouping_cost", l.grouping_cost},
                           {"approximation_residual", l.approximation_residual},
                           {"representation_cost", l.representation_cost},
                           {"seconds", l.seconds}});
  }
  if (heldout) j["heldout"] = {{"accuracy", heldout->accuracy}, {"loss", heldout->loss}};
  j["total_seconds"] = total_seconds;
  return j.dump(2);
}

// --- Baselines -------------------------------------------------------------------

Model vanilla_average(std::span<const Model> models, std::span<const std::vector<Vector>> row_weights) {
  if (models.empty()) throw std::invalid_argument("vanilla_average: no models");
  for (const auto& m : models) {
    if (!same_architecture(m, models.front())) throw std::invalid_argument("vanilla_average: architecture mismatch");
  }
  if (!row_weights.empty() && row_weights.size() != models.size()) {
    throw std::invalid_argument("vanilla_average: one weight list per model is required");
  }
  std::vector<Layer> layers = models.front().layers();
  const auto affine = models.front().affine_indices();
  for (std::size_t a = 0; a < affine.size(); ++a) {
    auto& dst = std::get<AffineLayer>(layers[affine[a]]);
    for (Eigen::Index r = 0; r < dst.out_dim(); ++r) {
      Vector w = Vector::Ones(static_cast<Eigen::Index>(models.size()));
      if (!row_weights.empty()) {
        for (std::size_t m = 0; m < models.size(); ++m) {
          const auto& rw = row_weights[m].at(a);
          if (rw.size() != dst.out_dim()) throw std::invalid_argument("vanilla_average: weight length mismatch");
          w(static_cast<Eigen::Index>(m)) = rw(r);
        }
      }
      const double total = w.sum();
      if (!(total > 0.0)) w.setOnes();
      w /= w.sum();
      dst.weight.row(r).setZero();
      dst.bias(r) = 0.0;
      for (std::size_t m = 0; m < models.size(); ++m) {
        const auto& src = models[m].affine(affine[a]);
        dst.weight.row(r) += w(static_cast<Eigen::Index>(m)) * src.weight.row(r);
        dst.bias(r) += w(static_cast<Eigen::Index>(m)) * src.bias(r);
      }
    }
  }
  return Model(std::move(layers));
}

Matrix ensemble_predict(std::span<const Model> models, const Matrix& x) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  Matrix sum = Matrix::Zero(x.rows(), models.front().output_dim());
  for (const auto& m : models) {
    if (m.output_dim() != sum.cols()) throw std::invalid_argument("ensemble_predict: output_dim mismatch");
    sum += softmax(forward(m, x));
  }
  return sum / static_cast<double>(models.size());
}

Model last_layer_kd(std::span<const Model> models, Model init, const Matrix& x, const KdSettings& settings) {
  const Matrix soft = ensemble_predict(models, x);
  if (soft.cols() != init.output_dim()) throw std::invalid_argument("last_layer_kd: output_dim mismatch");
  const std::size_t last = init.layer_count() - 1;
  const std::span<const Layer> body(init.layers().data(), last);
  const Matrix features = apply_layers(body, x);

  std::vector<Layer> head{init.layers()[last]};
  auto params = affine_params(head);
  Optimizer opt(OptimizerKind::adam, 0.0);
  std::mt19937_64 rng(settings.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(settings.batch_size);

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::span<const Eigen::Index> idx(order.data() + start, end - start);
      const Matrix fb = rows_of(features, idx);
      const Matrix qb = rows_of(soft, idx);
      const Matrix p = softmax(apply_layer(head.front(), fb));
      const Matrix upstream = (p - qb) / static_cast<double>(idx.size());
      if (!upstream.allFinite()) throw TrainingError("last_layer_kd: non-finite loss at epoch " + std::to_string(epoch));
      const Gradients g = backward_layers(head, fb, upstream);
      opt.step(params, affine_grads(g), settings.lr);
    }
  }

  std::vector<Layer> layers = init.layers();
  layers[last] = head.front();
  return Model(std::move(layers));
}

}  // namespace nimf
