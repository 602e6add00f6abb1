#pragma once

// Grouping of concatenated base-model neurons into fused-neuron clusters.
//
// Neurons are represented by their output columns over a batch: Z is B x d
// with one column per neuron, and the K-means routines take the transpose
// (d x B, neurons as rows). Weights are importance scores, already floored.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nimf/numerics.hpp"

namespace nimf {

struct GroupingResult {
  std::vector<int> assignment;  // cluster index per concatenated neuron
  Matrix targets;               // B x k, column k = weighted mean of members
  double grouping_cost = 0.0;

  int cluster_count() const { return static_cast<int>(targets.cols()); }
};

// --- Linear sum assignment ---------------------------------------------------

/// Exact minimum-cost perfect matching on a square cost matrix
/// (shortest augmenting path, O(n^3)). Returns perm with row i -> column perm[i].
std::vector<int> hungarian(const Matrix& cost);

/// sum_i cost(i, perm[i]), accumulated in row order.
double assignment_total(const Matrix& cost, std::span<const int> perm);

enum class MatchCost { exact, heuristic };

const char* to_string(MatchCost m);
MatchCost parse_match_cost(const std::string& s);

/// d x d matching costs between the neurons of two models.
/// exact:     s1 ||z1 - T||^2 + s2 ||z2 - T||^2, T the weighted pair mean,
///            which equals s1 s2 / (s1 + s2) ||z1 - z2||^2.
/// heuristic: ||z1 - z2||^2.
Matrix hf_cost_matrix(const Matrix& z1, const Vector& s1, const Matrix& z2, const Vector& s2, MatchCost mode);

/// One-to-one grouping of two equal-width models: cluster k holds neuron k of
/// the first model and its matched neuron of the second. The assignment
/// indexes the concatenation [Z1 | Z2].
GroupingResult hungarian_grouping(const Matrix& z1, const Vector& s1, const Matrix& z2, const Vector& s2,
                                  MatchCost mode);

// --- Targets -----------------------------------------------------------------

/// B x k matrix whose column c is the s-weighted mean of the columns of Z
/// assigned to c. Throws if a cluster is empty or has zero total weight.
Matrix targets_from_assignment(const Matrix& z, const Vector& s, std::span<const int> assignment, int k);

/// sum_j s_j ||targets(:, a_j) - z(:, j)||^2.
double grouping_cost(const Matrix& z, const Vector& s, std::span<const int> assignment, const Matrix& targets);

/// Grouping result (targets and cost) for a given assignment.
GroupingResult make_grouping(const Matrix& z, const Vector& s, std::vector<int> assignment, int k);

// --- Weighted K-means --------------------------------------------------------

struct KMeansOptions {
  std::uint64_t seed = 0;
  int max_iters = 300;
  double tol = 1e-10;
  int restarts = 5;
  /// Cluster unit-normalised neuron vectors; targets still use raw outputs.
  bool normalize = false;
};

struct LloydResult {
  std::vector<int> assignment;
  Matrix centroids;                    // k x B
  std::vector<double> objective_trace;  // objective after every iteration
  int iterations = 0;
};

/// Importance-weighted K-means++ seeding: first centre drawn with
/// probability proportional to w, later ones proportional to w * D^2.
Matrix kmeanspp_init(const Matrix& points, const Vector& weights, int k, std::mt19937_64& rng);

/// Lloyd iterations from the given centroids. Ties go to the lowest cluster
/// index. An empty cluster takes the point with the largest weighted distance
/// to its centroid (among clusters with at least two members) as a singleton.
/// Stops at an assignment fixpoint, relative objective change below tol, or
/// max_iters.
LloydResult lloyd(const Matrix& points, const Vector& weights, Matrix centroids, int max_iters, double tol);

/// Best of opts.restarts seeded K-means++ / Lloyd runs on d x B points.
GroupingResult weighted_kmeans(const Matrix& points, const Vector& weights, int k, const KMeansOptions& opts);

/// Best-improvement single-swap refinement: replace one centroid by a data
/// point, reassign, recompute weighted means, keep the swap if the cost
/// drops. Never returns a costlier grouping than `result`.
GroupingResult local_search_refine(const GroupingResult& result, const Matrix& points, const Vector& weights,
                                   int rounds);

/// CSV with header model_id,level,neuron,cluster,score.
struct AssignmentRow {
  int model_id;
  std::size_t level;
  Eigen::Index neuron;
  int cluster;
  double score;
};
std::string assignment_to_csv(std::span<const AssignmentRow> rows);

}  // namespace nimf
