#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// Every value is an Eigen matrix. Scalars are 1x1 matrices, row vectors are
// 1xn. A forward pass records a DAG of shared nodes; backward() walks it in
// reverse topological order and accumulates gradients into every node that
// requires them. Leaves created with parameter() keep their gradient buffer
// across passes so an optimizer can consume it.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <random>
#include <vector>

namespace mmgt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Rng = std::mt19937_64;

namespace ad {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const;
  Matrix& mutable_grad();
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Suppresses graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar_constant(double value);

/// Seeds d(root)/d(root) = 1 and back-propagates. root must be 1x1.
void backward(const Var& root);

// Elementwise / broadcast arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var mul_scalar(const Var& a, const Var& s);
Var add_row(const Var& a, const Var& row);
Var add_col(const Var& a, const Var& col);
Var mul_col(const Var& a, const Var& col);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Nonlinearities.
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a, double guard = 0.0);
Var reciprocal(const Var& a, double guard = 0.0);
Var divide(const Var& a, const Var& b, double guard = 0.0);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var squared_norm(const Var& a);

// Structural.
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<int>& idx);
Var gather_block(const Var& a, const std::vector<int>& idx);
Var distribute_rows(const Var& base, const Var& rows, const std::vector<int>& idx);
Var l2_normalize(const Var& a);

// Row-wise softmax over entries where mask is true; masked entries are 0.
Var masked_row_softmax(const Var& scores, const BoolMatrix& mask);
Var row_softmax(const Var& scores);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

// out = sum_u weights(0,u) * mats[u]; weights is 1 x mats.size().
Var weighted_sum(const Var& weights, const std::vector<Matrix>& mats);

// Mean softmax cross-entropy over the rows listed in idx.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                          const std::vector<int>& idx);

// (1 / 2N^2) sum_ij A_ij ||z_i - z_j||^2.
Var pairwise_smoothness(const Var& adjacency, const Var& z);

}  // namespace ad
}  // namespace mmgt
