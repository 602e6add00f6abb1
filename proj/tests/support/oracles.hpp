#pragma once

// Test-side reference implementations. Each oracle is written independently
// of the library code it checks (brute force, explicit loops, or a different
// Eigen decomposition) so agreement is evidence rather than tautology.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nimf/network.hpp"

namespace oracle {

using nimf::Matrix;
using nimf::Vector;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0);
Vector random_positive(Eigen::Index n, std::mt19937_64& rng, double lo = 0.1, double hi = 2.0);

/// Minimum of sum_i cost(i, p(i)) over all permutations p.
double brute_force_assignment(const Matrix& cost);

/// Weighted mean of the columns of z in each cluster, by explicit loops.
Matrix cluster_means(const Matrix& z, const Vector& s, std::span<const int> assignment, int k);

/// sum_j s_j ||targets(:, a_j) - z(:, j)||^2 by explicit loops.
double assigned_sq_cost(const Matrix& fused, const Matrix& z, const Vector& s, std::span<const int> assignment);

struct Decomposition {
  double total;          // sum_j s_j ||zF_{a_j} - z_j||^2
  double approximation;  // sum_k (sum_{j in k} s_j) ||zF_k - T_k||^2
  double grouping;       // sum_j s_j ||T_{a_j} - z_j||^2
  double cross;          // sum_k <zF_k - T_k, sum_{j in k} s_j (T_k - z_j)>
  double scale;          // magnitude for relative tolerances
};

Decomposition decompose(const Matrix& fused, const Matrix& z, const Vector& s, std::span<const int> assignment);

/// Minimum weighted within-cluster cost over all assignments of the rows of
/// `points` (d x B) to k non-empty clusters (k^d enumeration).
double exhaustive_kmeans(const Matrix& points, const Vector& w, int k);

/// Weighted K-means objective of an assignment with weighted-mean centroids.
double kmeans_cost(const Matrix& points, const Vector& w, std::span<const int> assignment, int k);

/// (X^T S X)^{-1} X^T S T through a Cholesky solve of the normal equations.
Matrix normal_equations(const Matrix& x, const Vector& s, const Matrix& t);

/// Minimum-norm least-squares solution through a complete orthogonal
/// decomposition (independent of the SVD pseudoinverse).
Matrix min_norm_lstsq(const Matrix& x, const Matrix& t);

/// Orthogonal projector onto col(X) built from a rank-revealing QR.
Matrix projector(const Matrix& x);

/// Central finite-difference gradient of f at p (step h), entry by entry.
Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& p, double h = 1e-5);

/// Logits of a relu/identity MLP by explicit per-sample loops.
Matrix manual_forward(const nimf::Model& model, const Matrix& x);

/// Model whose hidden neurons at affine layer `affine_pos` (a layer index)
/// are permuted by perm: rows of that layer and columns of the next affine
/// layer are reordered so the network function is unchanged.
nimf::Model permute_hidden(const nimf::Model& model, std::size_t affine_pos, std::span<const int> perm);

/// NIMF bytes of a 1-layer affine model (out=2, in=1, W=[1.5; -2], b=[0.25; 0])
/// with partition {0}, authored byte by byte from the format description.
std::vector<std::uint8_t> golden_nimf();

/// IDX image file with 2 images of 2x3 pixels and a matching label file.
std::vector<std::uint8_t> golden_idx_images();
std::vector<std::uint8_t> golden_idx_labels();

}  // namespace oracle
