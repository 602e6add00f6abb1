#pragma once

// Dense linear algebra used by fusion: SVD pseudoinverse, weighted least
// squares and column-space projection. All routines work in double precision
// on Eigen dynamic matrices and are pure functions of their inputs.

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace nimf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff used when callers do not pass one.
inline constexpr double kDefaultRcond = 1e-10;

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);

/// Throws NumericsError if any entry of `m` is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

/// Nonnegative per-row weights of a least-squares problem (the diagonal of S).
class DiagWeights {
 public:
  /// Validates that every entry is finite and >= 0 and that one entry is > 0.
  explicit DiagWeights(Vector entries);

  static DiagWeights uniform(Eigen::Index n);

  const Vector& entries() const { return entries_; }
  Eigen::Index size() const { return entries_.size(); }

 private:
  Vector entries_;
};

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// rcond * sigma_max are treated as zero.
Matrix pseudoinverse(const Matrix& a, double rcond = kDefaultRcond);

/// Minimum-norm minimiser W (p x k) of sum_m S_m ||X_m W - T_m||^2.
///
/// Rows of X and T are scaled by sqrt(S) and the resulting unweighted problem
/// is solved through the pseudoinverse, so X^T S X is never formed.
Matrix weighted_least_squares(const Matrix& x, const DiagWeights& weights, const Matrix& t,
                              double rcond = kDefaultRcond);

/// Orthonormal basis (B x r) of the column space of X, numerical rank r.
Matrix column_space_basis(const Matrix& x, double rcond = kDefaultRcond);

/// P Z with P = X (X^T X)^+ X^T the orthogonal projector onto col(X).
Matrix project_columnspace(const Matrix& x, const Matrix& z, double rcond = kDefaultRcond);

/// [X | 1]: appends a column of ones.
Matrix with_bias_column(const Matrix& x);

}  // namespace nimf
