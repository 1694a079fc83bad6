#include "mmgt/population_graph.hpp"

#include "mmgt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mmgt {

double correlation_distance(const Eigen::Ref<const RowVector>& a,
                            const Eigen::Ref<const RowVector>& b) {
  if (a.size() != b.size()) throw ValidationError("correlation_distance: length mismatch");
  const RowVector ca = a.array() - a.mean();
  const RowVector cb = b.array() - b.mean();
  const double na = ca.norm(), nb = cb.norm();
  if (na <= 1e-15 * std::max(1.0, a.cwiseAbs().maxCoeff()) ||
      nb <= 1e-15 * std::max(1.0, b.cwiseAbs().maxCoeff())) {
    return 1.0;
  }
  const double r = std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
  return 1.0 - r;
}

double similarity_kernel(const Eigen::Ref<const RowVector>& a,
                         const Eigen::Ref<const RowVector>& b, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("kernel width must be positive");
  const double rho = correlation_distance(a, b);
  return std::exp(-rho * rho / (2.0 * sigma * sigma));
}

Matrix correlation_distance_matrix(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix centered = x.colwise() - x.rowwise().mean();
  Vector norms = centered.rowwise().norm();
  std::vector<bool> flat(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    flat[static_cast<std::size_t>(i)] =
        norms(i) <= 1e-15 * std::max(1.0, x.row(i).cwiseAbs().maxCoeff());
    if (!flat[static_cast<std::size_t>(i)]) centered.row(i) /= norms(i);
  }
  Matrix corr = centered * centered.transpose();
  Matrix dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (flat[static_cast<std::size_t>(i)] || flat[static_cast<std::size_t>(j)]) {
        dist(i, j) = 1.0;
      } else {
        dist(i, j) = 1.0 - std::clamp(corr(i, j), -1.0, 1.0);
      }
    }
  }
  // Exact symmetry and zero self-distance for non-flat rows.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!flat[static_cast<std::size_t>(i)]) dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) dist(j, i) = dist(i, j);
  }
  return dist;
}

double default_kernel_width(const Matrix& distances, const std::vector<int>& train_idx) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < train_idx.size(); ++a) {
    for (std::size_t b = a + 1; b < train_idx.size(); ++b) {
      total += distances(train_idx[a], train_idx[b]);
      ++pairs;
    }
  }
  if (pairs == 0 || !(total > 0.0)) return 1.0;
  return total / static_cast<double>(pairs);
}

PopulationGraph assemble_population_graph(const Matrix& x_img, const Matrix& x_non,
                                          const Matrix& affinity, double sigma) {
  const Eigen::Index n = x_img.rows();
  if (x_non.rows() != n || affinity.rows() != n || affinity.cols() != n) {
    throw ValidationError("population graph: row counts of features and affinity differ");
  }
  if (!(sigma > 0.0)) throw ValidationError("population graph: sigma must be positive");
  PopulationGraph g;
  g.x_img = x_img;
  g.x_non = x_non;
  g.x_cat.resize(n, x_img.cols() + x_non.cols());
  g.x_cat << x_img, x_non;
  g.sigma = sigma;
  g.affinity = affinity;
  const Matrix dist = correlation_distance_matrix(g.x_cat);
  g.similarity = (-dist.array().square() / (2.0 * sigma * sigma)).exp().matrix();
  g.similarity.diagonal().setOnes();
  g.similarity.triangularView<Eigen::StrictlyLower>() = g.similarity.transpose();
  g.adjacency = g.similarity.cwiseProduct(affinity);
  g.adjacency.diagonal().setOnes();
  return g;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix edge_dropout_mask(Eigen::Index n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("edge dropout rate must lie in [0,1)");
  Matrix mask = Matrix::Ones(n, n);
  if (p == 0.0) return mask;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (unit(rng) < p) mask(i, j) = mask(j, i) = 0.0;
    }
  }
  return mask;
}

Matrix apply_edge_dropout(const Matrix& adjacency, double p, std::uint64_t seed, bool training) {
  if (!training) return adjacency;
  return adjacency.cwiseProduct(edge_dropout_mask(adjacency.rows(), p, seed));
}

Matrix threshold_edges(const Matrix& adjacency, double eps) {
  Matrix out = (adjacency.array() < eps).select(0.0, adjacency);
  out.diagonal() = adjacency.diagonal();
  return out;
}

namespace graph_ops {

ad::Var adjacency(const Matrix& similarity, const ad::Var& affinity) {
  Matrix off = similarity;
  off.diagonal().setZero();
  const Eigen::Index n = similarity.rows();
  return ad::add(ad::hadamard(ad::constant(std::move(off)), affinity),
                 ad::constant(Matrix::Identity(n, n)));
}

}  // namespace graph_ops

}  // namespace mmgt
