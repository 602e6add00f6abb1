#include "nimf/numerics.hpp"

#include <cmath>
#include <sstream>

namespace nimf {

namespace {

using Svd = Eigen::BDCSVD<Matrix>;

Svd thin_svd(const Matrix& a) {
  Svd svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericsError("SVD failed to converge for matrix of shape " + shape_string(a));
  }
  return svd;
}

Eigen::Index numerical_rank(const Vector& sigma, double rcond) {
  if (sigma.size() == 0 || sigma(0) <= 0.0) return 0;
  const double cutoff = rcond * sigma(0);
  Eigen::Index r = 0;
  while (r < sigma.size() && sigma(r) > cutoff) ++r;
  return r;
}

}  // namespace

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericsError(std::string(what) + " (" + shape_string(m) + ") contains non-finite entries");
  }
}

DiagWeights::DiagWeights(Vector entries) : entries_(std::move(entries)) {
  bool any_positive = false;
  for (Eigen::Index i = 0; i < entries_.size(); ++i) {
    const double w = entries_(i);
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("DiagWeights: entry " + std::to_string(i) + " is negative or non-finite");
    }
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("DiagWeights: all entries are zero");
}

DiagWeights DiagWeights::uniform(Eigen::Index n) { return DiagWeights(Vector::Ones(n)); }

Matrix pseudoinverse(const Matrix& a, double rcond) {
  require_finite(a, "pseudoinverse input");
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  const Svd svd = thin_svd(a);
  const Vector& sigma = svd.singularValues();
  const Eigen::Index r = numerical_rank(sigma, rcond);
  if (r == 0) return Matrix::Zero(a.cols(), a.rows());
  const Matrix v = svd.matrixV().leftCols(r);
  const Matrix u = svd.matrixU().leftCols(r);
  return v * sigma.head(r).cwiseInverse().asDiagonal() * u.transpose();
}

Matrix weighted_least_squares(const Matrix& x, const DiagWeights& weights, const Matrix& t, double rcond) {
  if (x.rows() != t.rows() || x.rows() != weights.size()) {
    throw std::invalid_argument("weighted_least_squares: shape mismatch X " + shape_string(x) + ", T " +
                                shape_string(t) + ", S length " + std::to_string(weights.size()));
  }
  require_finite(t, "weighted_least_squares target");
  const Vector root = weights.entries().cwiseSqrt();
  const Matrix xs = root.asDiagonal() * x;
  const Matrix ts = root.asDiagonal() * t;
  return pseudoinverse(xs, rcond) * ts;
}

Matrix column_space_basis(const Matrix& x, double rcond) {
  require_finite(x, "column_space_basis input");
  if (x.size() == 0) return Matrix(x.rows(), 0);
  const Svd svd = thin_svd(x);
  const Eigen::Index r = numerical_rank(svd.singularValues(), rcond);
  return svd.matrixU().leftCols(r);
}

Matrix project_columnspace(const Matrix& x, const Matrix& z, double rcond) {
  if (x.rows() != z.rows()) {
    throw std::invalid_argument("project_columnspace: row mismatch X " + shape_string(x) + ", Z " +
                                shape_string(z));
  }
  const Matrix u = column_space_basis(x, rcond);
  return u * (u.transpose() * z);
}

Matrix with_bias_column(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

}  // namespace nimf
