#include "nimf/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace nimf {

// --- Linear sum assignment ---------------------------------------------------

std::vector<int> hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw std::invalid_argument("hungarian: cost matrix must be square, got " + shape_string(cost));
  }
  require_finite(cost, "hungarian cost");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};

  constexpr double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows) and v (columns); p[j] is the row matched to column j.
  // Index 0 is a virtual column used as the root of each augmenting search.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> perm(n, -1);
  for (int j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

double assignment_total(const Matrix& cost, std::span<const int> perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += cost(static_cast<Eigen::Index>(i), perm[i]);
  return total;
}

const char* to_string(MatchCost m) { return m == MatchCost::exact ? "exact" : "heuristic"; }

MatchCost parse_match_cost(const std::string& s) {
  if (s == "exact") return MatchCost::exact;
  if (s == "heuristic") return MatchCost::heuristic;
  throw std::invalid_argument("unknown match cost '" + s + "'");
}

Matrix hf_cost_matrix(const Matrix& z1, const Vector& s1, const Matrix& z2, const Vector& s2, MatchCost mode) {
  if (z1.cols() != z2.cols() || z1.rows() != z2.rows()) {
    throw std::invalid_argument("hf_cost_matrix: level outputs differ in shape " + shape_string(z1) + " vs " +
                                shape_string(z2));
  }
  if (s1.size() != z1.cols() || s2.size() != z2.cols()) {
    throw std::invalid_argument("hf_cost_matrix: score length does not match width");
  }
  const Eigen::Index d = z1.cols();
  Matrix cost(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      const double dist = (z1.col(a) - z2.col(b)).squaredNorm();
      if (mode == MatchCost::heuristic) {
        cost(a, b) = dist;
      } else {
        const double total = s1(a) + s2(b);
        cost(a, b) = total > 0.0 ? s1(a) * s2(b) / total * dist : 0.0;
      }
    }
  }
  return cost;
}

GroupingResult hungarian_grouping(const Matrix& z1, const Vector& s1, const Matrix& z2, const Vector& s2,
                                  MatchCost mode) {
  const Matrix cost = hf_cost_matrix(z1, s1, z2, s2, mode);
  const std::vector<int> perm = hungarian(cost);
  const Eigen::Index d = z1.cols();
  std::vector<int> assignment(static_cast<std::size_t>(2 * d));
  for (Eigen::Index i = 0; i < d; ++i) {
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(i);
    assignment[static_cast<std::size_t>(d + perm[static_cast<std::size_t>(i)])] = static_cast<int>(i);
  }
  Matrix z(z1.rows(), 2 * d);
  z << z1, z2;
  Vector s(2 * d);
  s << s1, s2;
  return make_grouping(z, s, std::move(assignment), static_cast<int>(d));
}

// --- Targets -----------------------------------------------------------------

Matrix targets_from_assignment(const Matrix& z, const Vector& s, std::span<const int> assignment, int k) {
  if (static_cast<Eigen::Index>(assignment.size()) != z.cols() || s.size() != z.cols()) {
    throw std::invalid_argument("targets_from_assignment: assignment/score length does not match neuron count");
  }
  Matrix sums = Matrix::Zero(z.rows(), k);
  Vector mass = Vector::Zero(k);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int c = assignment[static_cast<std::size_t>(j)];
    if (c < 0 || c >= k) throw std::invalid_argument("targets_from_assignment: cluster index out of range");
    sums.col(c) += s(j) * z.col(j);
    mass(c) += s(j);
  }
  for (int c = 0; c < k; ++c) {
    if (!(mass(c) > 0.0)) {
      throw std::invalid_argument("targets_from_assignment: cluster " + std::to_string(c) +
                                  " is empty or has zero total score");
    }
    sums.col(c) /= mass(c);
  }
  return sums;
}

double grouping_cost(const Matrix& z, const Vector& s, std::span<const int> assignment, const Matrix& targets) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    total += s(j) * (targets.col(assignment[static_cast<std::size_t>(j)]) - z.col(j)).squaredNorm();
  }
  return total;
}

GroupingResult make_grouping(const Matrix& z, const Vector& s, std::vector<int> assignment, int k) {
  GroupingResult r;
  r.targets = targets_from_assignment(z, s, assignment, k);
  r.grouping_cost = grouping_cost(z, s, assignment, r.targets);
  r.assignment = std::move(assignment);
  return r;
}

// --- Weighted K-means --------------------------------------------------------

namespace {

void check_kmeans_inputs(const Matrix& points, const Vector& weights, int k) {
  if (weights.size() != points.rows()) throw std::invalid_argument("weighted_kmeans: weight length mismatch");
  if (k < 1) throw std::invalid_argument("weighted_kmeans: k must be >= 1");
  if (k > points.rows()) {
    throw std::invalid_argument("weighted_kmeans: k = " + std::to_string(k) + " exceeds point count " +
                                std::to_string(points.rows()));
  }
  (void)DiagWeights(weights);
  require_finite(points, "weighted_kmeans points");
}

std::size_t sample_index(const std::vector<double>& mass, std::mt19937_64& rng) {
  double total = 0.0;
  for (double m : mass) total += m;
  std::uniform_real_distribution<double> u(0.0, total);
  const double r = u(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (mass[i] <= 0.0) continue;
    acc += mass[i];
    last_positive = i;
    if (r < acc) return i;
  }
  return last_positive;
}

// Nearest centroid per point, lowest index on ties. Returns squared distances.
std::vector<double> assign_nearest(const Matrix& points, const Matrix& centroids, std::vector<int>& assignment) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centroids.rows();
  assignment.resize(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    int best = 0;
    double best_d = (points.row(j) - centroids.row(0)).squaredNorm();
    for (Eigen::Index c = 1; c < k; ++c) {
      const double d = (points.row(j) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[static_cast<std::size_t>(j)] = best;
    dist[static_cast<std::size_t>(j)] = best_d;
  }
  return dist;
}

void repair_empty(const Matrix& points, const Vector& weights, Matrix& centroids, std::vector<int>& assignment,
                  std::vector<double>& dist) {
  const Eigen::Index k = centroids.rows();
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int a : assignment) ++counts[static_cast<std::size_t>(a)];
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) continue;
    Eigen::Index pick = -1;
    double worst = -1.0;
    for (Eigen::Index j = 0; j < points.rows(); ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (counts[static_cast<std::size_t>(assignment[js])] < 2) continue;
      const double wd = weights(j) * dist[js];
      if (wd > worst) {
        worst = wd;
        pick = j;
      }
    }
    if (pick < 0) throw std::logic_error("weighted_kmeans: cannot repair empty cluster");
    const auto ps = static_cast<std::size_t>(pick);
    --counts[static_cast<std::size_t>(assignment[ps])];
    assignment[ps] = static_cast<int>(c);
    counts[static_cast<std::size_t>(c)] = 1;
    dist[ps] = 0.0;
    centroids.row(c) = points.row(pick);
  }
}

Matrix weighted_means(const Matrix& points, const Vector& weights, const std::vector<int>& assignment, Eigen::Index k) {
  Matrix sums = Matrix::Zero(k, points.cols());
  Vector mass = Vector::Zero(k);
  for (Eigen::Index j = 0; j < points.rows(); ++j) {
    const int c = assignment[static_cast<std::size_t>(j)];
    sums.row(c) += weights(j) * points.row(j);
    mass(c) += weights(j);
  }
  for (Eigen::Index c = 0; c < k; ++c) sums.row(c) /= mass(c);
  return sums;
}

double kmeans_objective(const Matrix& points, const Vector& weights, const std::vector<int>& assignment,
                        const Matrix& centroids) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < points.rows(); ++j) {
    total += weights(j) * (points.row(j) - centroids.row(assignment[static_cast<std::size_t>(j)])).squaredNorm();
  }
  return total;
}

Matrix normalized_rows(const Matrix& points) {
  Matrix out = points;
  for (Eigen::Index j = 0; j < out.rows(); ++j) {
    const double n = out.row(j).norm();
    if (n > 0.0) out.row(j) /= n;
  }
  return out;
}

}  // namespace

Matrix kmeanspp_init(const Matrix& points, const Vector& weights, int k, std::mt19937_64& rng) {
  check_kmeans_inputs(points, weights, k);
  const auto n = static_cast<std::size_t>(points.rows());
  Matrix centroids(k, points.cols());
  std::vector<char> chosen(n, 0);
  std::vector<double> mass(weights.data(), weights.data() + n);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  for (int c = 0; c < k; ++c) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += chosen[j] ? 0.0 : mass[j];
    std::size_t pick;
    if (total > 0.0) {
      std::vector<double> m(n);
      for (std::size_t j = 0; j < n; ++j) m[j] = chosen[j] ? 0.0 : mass[j];
      pick = sample_index(m, rng);
    } else {
      // Every remaining point coincides with a centre; take any unchosen one.
      std::vector<double> m(n);
      for (std::size_t j = 0; j < n; ++j) m[j] = chosen[j] ? 0.0 : 1.0;
      pick = sample_index(m, rng);
    }
    chosen[pick] = 1;
    centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t j = 0; j < n; ++j) {
      const double d = (points.row(static_cast<Eigen::Index>(j)) - centroids.row(c)).squaredNorm();
      d2[j] = std::min(d2[j], d);
      mass[j] = weights(static_cast<Eigen::Index>(j)) * d2[j];
    }
  }
  return centroids;
}

LloydResult lloyd(const Matrix& points, const Vector& weights, Matrix centroids, int max_iters, double tol) {
  const auto k = static_cast<int>(centroids.rows());
  check_kmeans_inputs(points, weights, k);
  if (centroids.cols() != points.cols()) throw std::invalid_argument("lloyd: centroid dimension mismatch");

  LloydResult r;
  std::vector<int> previous;
  double previous_obj = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < std::max(1, max_iters); ++iter) {
    std::vector<int> assignment;
    auto dist = assign_nearest(points, centroids, assignment);
    repair_empty(points, weights, centroids, assignment, dist);
    centroids = weighted_means(points, weights, assignment, k);
    const double obj = kmeans_objective(points, weights, assignment, centroids);
    r.objective_trace.push_back(obj);
    r.iterations = iter + 1;
    const bool fixpoint = assignment == previous;
    const bool stalled = std::isfinite(previous_obj) && previous_obj - obj <= tol * std::max(previous_obj, 1e-300);
    previous = std::move(assignment);
    previous_obj = obj;
    if (fixpoint || stalled) break;
  }
  r.assignment = std::move(previous);
  r.centroids = std::move(centroids);
  return r;
}

GroupingResult weighted_kmeans(const Matrix& points, const Vector& weights, int k, const KMeansOptions& opts) {
  check_kmeans_inputs(points, weights, k);
  const Matrix cluster_points = opts.normalize ? normalized_rows(points) : points;
  std::mt19937_64 rng(opts.seed);

  std::vector<int> best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(1, opts.restarts); ++run) {
    Matrix init = kmeanspp_init(cluster_points, weights, k, rng);
    LloydResult res = lloyd(cluster_points, weights, std::move(init), opts.max_iters, opts.tol);
    const double obj = kmeans_objective(cluster_points, weights, res.assignment, res.centroids);
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(res.assignment);
    }
  }
  return make_grouping(points.transpose(), weights, std::move(best), k);
}

GroupingResult local_search_refine(const GroupingResult& result, const Matrix& points, const Vector& weights,
                                   int rounds) {
  const int k = result.cluster_count();
  check_kmeans_inputs(points, weights, k);
  if (static_cast<Eigen::Index>(result.assignment.size()) != points.rows()) {
    throw std::invalid_argument("local_search_refine: assignment length mismatch");
  }
  const Matrix z = points.transpose();
  GroupingResult current = result;
  for (int round = 0; round < rounds; ++round) {
    const Matrix centroids = current.targets.transpose();
    double best_cost = current.grouping_cost;
    std::vector<int> best_assignment;
    for (int c = 0; c < k; ++c) {
      for (Eigen::Index p = 0; p < points.rows(); ++p) {
        Matrix trial = centroids;
        trial.row(c) = points.row(p);
        std::vector<int> assignment;
        auto dist = assign_nearest(points, trial, assignment);
        repair_empty(points, weights, trial, assignment, dist);
        const Matrix means = weighted_means(points, weights, assignment, k);
        const double cost = kmeans_objective(points, weights, assignment, means);
        if (cost < best_cost) {
          best_cost = cost;
          best_assignment = std::move(assignment);
        }
      }
    }
    if (best_assignment.empty()) break;
    const Matrix means = weighted_means(points, weights, best_assignment, k);
    LloydResult polished = lloyd(points, weights, means, 100, 0.0);
    GroupingResult candidate = make_grouping(z, weights, std::move(polished.assignment), k);
    if (!(candidate.grouping_cost < current.grouping_cost)) break;
    current = std::move(candidate);
  }
  return current;
}

std::string assignment_to_csv(std::span<const AssignmentRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "model_id,level,neuron,cluster,score\n";
  for (const auto& r : rows) {
    os << r.model_id << ',' << r.level << ',' << r.neuron << ',' << r.cluster << ',' << r.score << '\n';
  }
  return os.str();
}

}  // namespace nimf
