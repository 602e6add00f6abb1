#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oracle {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  }
  return m;
}

Vector random_positive(Eigen::Index n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

double brute_force_assignment(const Matrix& cost) {
  std::vector<int> p(static_cast<std::size_t>(cost.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += cost(static_cast<Eigen::Index>(i), p[i]);
    best = std::min(best, total);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Matrix cluster_means(const Matrix& z, const Vector& s, std::span<const int> assignment, int k) {
  Matrix t = Matrix::Zero(z.rows(), k);
  std::vector<double> mass(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int c = assignment[static_cast<std::size_t>(j)];
    mass[static_cast<std::size_t>(c)] += s(j);
    for (Eigen::Index b = 0; b < z.rows(); ++b) t(b, c) += s(j) * z(b, j);
  }
  for (int c = 0; c < k; ++c) {
    for (Eigen::Index b = 0; b < z.rows(); ++b) t(b, c) /= mass[static_cast<std::size_t>(c)];
  }
  return t;
}

double assigned_sq_cost(const Matrix& fused, const Matrix& z, const Vector& s, std::span<const int> assignment) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int c = assignment[static_cast<std::size_t>(j)];
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
      const double d = fused(b, c) - z(b, j);
      total += s(j) * d * d;
    }
  }
  return total;
}

Decomposition decompose(const Matrix& fused, const Matrix& z, const Vector& s, std::span<const int> assignment) {
  const int k = static_cast<int>(fused.cols());
  const Matrix t = cluster_means(z, s, assignment, k);
  Decomposition d{};
  d.total = assigned_sq_cost(fused, z, s, assignment);
  d.grouping = assigned_sq_cost(t, z, s, assignment);
  std::vector<double> mass(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index j = 0; j < z.cols(); ++j) mass[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] += s(j);
  d.approximation = 0.0;
  for (int c = 0; c < k; ++c) {
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
      const double diff = fused(b, c) - t(b, c);
      d.approximation += mass[static_cast<std::size_t>(c)] * diff * diff;
    }
  }
  d.cross = 0.0;
  d.scale = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int c = assignment[static_cast<std::size_t>(j)];
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
      const double term = (fused(b, c) - t(b, c)) * s(j) * (t(b, c) - z(b, j));
      d.cross += term;
      d.scale += std::abs(term);
    }
  }
  return d;
}

double kmeans_cost(const Matrix& points, const Vector& w, std::span<const int> assignment, int k) {
  // points are rows; reuse the column-oriented helpers on the transpose.
  const Matrix z = points.transpose();
  return assigned_sq_cost(cluster_means(z, w, assignment, k), z, w, assignment);
}

double exhaustive_kmeans(const Matrix& points, const Vector& w, int k) {
  const auto d = static_cast<std::size_t>(points.rows());
  std::vector<int> a(d, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<int> used(static_cast<std::size_t>(k), 0);
    for (int c : a) used[static_cast<std::size_t>(c)] = 1;
    if (std::all_of(used.begin(), used.end(), [](int u) { return u == 1; })) {
      best = std::min(best, kmeans_cost(points, w, a, k));
    }
    std::size_t i = 0;
    while (i < d && ++a[i] == k) a[i++] = 0;
    if (i == d) break;
  }
  return best;
}

Matrix normal_equations(const Matrix& x, const Vector& s, const Matrix& t) {
  const Matrix xs = x.transpose() * s.asDiagonal();
  return (xs * x).llt().solve(xs * t);
}

Matrix min_norm_lstsq(const Matrix& x, const Matrix& t) {
  return x.completeOrthogonalDecomposition().solve(t);
}

Matrix projector(const Matrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  const Eigen::Index r = qr.rank();
  const Matrix q = qr.householderQ() * Matrix::Identity(x.rows(), r);
  return q * q.transpose();
}

Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& p, double h) {
  Matrix g(p.rows(), p.cols());
  Matrix q = p;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      q(i, j) = p(i, j) + h;
      const double up = f(q);
      q(i, j) = p(i, j) - h;
      const double down = f(q);
      q(i, j) = p(i, j);
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

Matrix manual_forward(const nimf::Model& model, const Matrix& x) {
  Matrix out(x.rows(), model.output_dim());
  for (Eigen::Index m = 0; m < x.rows(); ++m) {
    std::vector<double> cur(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.cols(); ++i) cur[static_cast<std::size_t>(i)] = x(m, i);
    for (const auto& layer : model.layers()) {
      if (const auto* a = std::get_if<nimf::AffineLayer>(&layer)) {
        std::vector<double> next(static_cast<std::size_t>(a->weight.rows()));
        for (Eigen::Index r = 0; r < a->weight.rows(); ++r) {
          double acc = a->bias(r);
          for (Eigen::Index c = 0; c < a->weight.cols(); ++c) acc += a->weight(r, c) * cur[static_cast<std::size_t>(c)];
          next[static_cast<std::size_t>(r)] = acc;
        }
        cur = std::move(next);
      } else if (std::get<nimf::ActivationLayer>(layer).fn == nimf::Activation::relu) {
        for (double& v : cur) v = v > 0.0 ? v : 0.0;
      }
    }
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(m, c) = cur[static_cast<std::size_t>(c)];
  }
  return out;
}

nimf::Model permute_hidden(const nimf::Model& model, std::size_t affine_pos, std::span<const int> perm) {
  std::vector<nimf::Layer> layers = model.layers();
  auto& a = std::get<nimf::AffineLayer>(layers.at(affine_pos));
  const nimf::AffineLayer orig = a;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    a.weight.row(static_cast<Eigen::Index>(i)) = orig.weight.row(perm[i]);
    a.bias(static_cast<Eigen::Index>(i)) = orig.bias(perm[i]);
  }
  for (std::size_t l = affine_pos + 1; l < layers.size(); ++l) {
    if (auto* next = std::get_if<nimf::AffineLayer>(&layers[l])) {
      const Matrix w = next->weight;
      for (std::size_t i = 0; i < perm.size(); ++i) next->weight.col(static_cast<Eigen::Index>(i)) = w.col(perm[i]);
      break;
    }
  }
  return nimf::Model(std::move(layers));
}

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& b, const std::uint8_t (&le)[8]) { b.insert(b.end(), le, le + 8); }

}  // namespace

std::vector<std::uint8_t> golden_nimf() {
  std::vector<std::uint8_t> b{'N', 'I', 'M', 'F'};
  put_u16(b, 1);  // version
  put_u16(b, 1);  // one layer
  b.push_back(0);  // affine
  put_u32(b, 2);   // out
  put_u32(b, 1);   // in
  // IEEE-754 little-endian: 1.5, -2.0, 0.25, 0.0
  static const std::uint8_t w0[8] = {0, 0, 0, 0, 0, 0, 0xf8, 0x3f};
  static const std::uint8_t w1[8] = {0, 0, 0, 0, 0, 0, 0x00, 0xc0};
  static const std::uint8_t b0[8] = {0, 0, 0, 0, 0, 0, 0xd0, 0x3f};
  static const std::uint8_t b1[8] = {0, 0, 0, 0, 0, 0, 0x00, 0x00};
  put_f64(b, w0);
  put_f64(b, w1);
  put_f64(b, b0);
  put_f64(b, b1);
  put_u16(b, 1);  // partition: one boundary
  put_u16(b, 0);
  return b;
}

std::vector<std::uint8_t> golden_idx_images() {
  // magic 0x00000803, 2 images, 2 rows, 3 cols (big-endian), then pixels.
  return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
          0, 51, 102, 153, 204, 255,  //
          255, 0, 255, 0, 255, 0};
}

std::vector<std::uint8_t> golden_idx_labels() { return {0, 0, 8, 1, 0, 0, 0, 2, 7, 3}; }

}  // namespace oracle
