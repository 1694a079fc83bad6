#pragma once

#include "mmgt/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace mmgt {

/// 1 - Pearson correlation; a zero-variance operand gives 1.
double correlation_distance(const Eigen::Ref<const RowVector>& a,
                            const Eigen::Ref<const RowVector>& b);

/// exp(-rho^2 / (2 sigma^2)) with rho the correlation distance.
double similarity_kernel(const Eigen::Ref<const RowVector>& a,
                         const Eigen::Ref<const RowVector>& b, double sigma);

/// Pairwise correlation distances between rows of x.
Matrix correlation_distance_matrix(const Matrix& x);

/// Mean correlation distance over unordered pairs of training subjects.
double default_kernel_width(const Matrix& distances, const std::vector<int>& train_idx);

struct PopulationGraph {
  Matrix x_img;
  Matrix x_non;
  Matrix x_cat;
  Matrix similarity;  // kernel on x_cat, unit diagonal
  Matrix affinity;    // C
  Matrix adjacency;   // Sim (.) C off the diagonal, 1 on it
  double sigma = 1.0;
};

/// Concatenates modalities, evaluates the kernel on the concatenation and
/// multiplies it elementwise into C. Self-loops get weight 1.
PopulationGraph assemble_population_graph(const Matrix& x_img, const Matrix& x_non,
                                          const Matrix& affinity, double sigma);

/// Symmetric keep-mask with unit diagonal; each unordered off-diagonal pair is
/// dropped independently with probability p.
Matrix edge_dropout_mask(Eigen::Index n, double p, std::uint64_t seed);

Matrix apply_edge_dropout(const Matrix& adjacency, double p, std::uint64_t seed, bool training);

/// Zeroes off-diagonal entries below eps (optional sparsification for large graphs).
Matrix threshold_edges(const Matrix& adjacency, double eps);

/// SplitMix64-style combination used to derive per-epoch / per-fold streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

namespace graph_ops {

/// A = similarity_offdiag (.) C + I, differentiable in C.
ad::Var adjacency(const Matrix& similarity, const ad::Var& affinity);

}  // namespace graph_ops

}  // namespace mmgt
