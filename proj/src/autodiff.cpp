#include "mmgt/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace mmgt::ad {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Var make_result(Matrix value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

void accumulate(Node& target, const Matrix& delta) {
  if (!target.requires_grad) return;
  target.ensure_grad();
  target.grad += delta;
}

}  // namespace

void Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
}

const Matrix& Var::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

Matrix& Var::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Var::zero_grad() {
  node_->ensure_grad();
  node_->grad.setZero();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var scalar_constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    accumulate(*pa, self.grad);
    accumulate(*pb, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    accumulate(*pa, self.grad);
    accumulate(*pb, -self.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) accumulate(*pb, self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double factor) {
  auto pa = a.node();
  return make_result(a.value() * factor, {pa},
                     [pa, factor](Node& self) { accumulate(*pa, self.grad * factor); });
}

Var add_scalar(const Var& a, double offset) {
  auto pa = a.node();
  return make_result((a.value().array() + offset).matrix(), {pa},
                     [pa](Node& self) { accumulate(*pa, self.grad); });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("mul_scalar: s must be 1x1");
  auto pa = a.node(), ps = s.node();
  return make_result(a.value() * s.scalar(), {pa, ps}, [pa, ps](Node& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad * ps->value(0, 0));
    if (ps->requires_grad) {
      accumulate(*ps, Matrix::Constant(1, 1, self.grad.cwiseProduct(pa->value).sum()));
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row vector width mismatch");
  }
  auto pa = a.node(), pr = row.node();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    accumulate(*pa, self.grad);
    if (pr->requires_grad) accumulate(*pr, self.grad.colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("add_col: column vector height mismatch");
  }
  auto pa = a.node(), pc = col.node();
  Matrix out = a.value().colwise() + col.value().col(0);
  return make_result(std::move(out), {pa, pc}, [pa, pc](Node& self) {
    accumulate(*pa, self.grad);
    if (pc->requires_grad) accumulate(*pc, self.grad.rowwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("mul_col: column vector height mismatch");
  }
  auto pa = a.node(), pc = col.node();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(out), {pa, pc}, [pa, pc](Node& self) {
    if (pa->requires_grad) {
      Matrix g = self.grad.array().colwise() * pc->value.col(0).array();
      accumulate(*pa, g);
    }
    if (pc->requires_grad) {
      accumulate(*pc, self.grad.cwiseProduct(pa->value).rowwise().sum());
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  auto pa = a.node(), pb = b.node();
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad * pb->value.transpose());
    if (pb->requires_grad) accumulate(*pb, pa->value.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  auto pa = a.node();
  return make_result(a.value().transpose(), {pa},
                     [pa](Node& self) { accumulate(*pa, self.grad.transpose()); });
}

Var sigmoid(const Var& a) {
  auto pa = a.node();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    Matrix g = (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix();
    accumulate(*pa, g);
  });
}

Var tanh(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().array().tanh().matrix();
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    Matrix g = (self.grad.array() * (1.0 - self.value.array().square())).matrix();
    accumulate(*pa, g);
  });
}

Var relu(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().cwiseMax(0.0);
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    Matrix g = (pa->value.array() > 0.0).select(self.grad, 0.0);
    accumulate(*pa, g);
  });
}

Var exp(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().array().exp().matrix();
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    accumulate(*pa, self.grad.cwiseProduct(self.value));
  });
}

Var log(const Var& a, double guard) {
  auto pa = a.node();
  Matrix out = (a.value().array() + guard).log().matrix();
  return make_result(std::move(out), {pa}, [pa, guard](Node& self) {
    accumulate(*pa, (self.grad.array() / (pa->value.array() + guard)).matrix());
  });
}

Var reciprocal(const Var& a, double guard) {
  auto pa = a.node();
  Matrix out = (1.0 / (a.value().array() + guard)).matrix();
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    accumulate(*pa, (-self.grad.array() * self.value.array().square()).matrix());
  });
}

Var divide(const Var& a, const Var& b, double guard) {
  require_same_shape(a, b, "divide");
  auto pa = a.node(), pb = b.node();
  Matrix out = (a.value().array() / (b.value().array() + guard)).matrix();
  return make_result(std::move(out), {pa, pb}, [pa, pb, guard](Node& self) {
    auto denom = pb->value.array() + guard;
    if (pa->requires_grad) accumulate(*pa, (self.grad.array() / denom).matrix());
    if (pb->requires_grad) {
      accumulate(*pb, (-self.grad.array() * self.value.array() / denom).matrix());
    }
  });
}

Var sum(const Var& a) {
  auto pa = a.node();
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {pa}, [pa](Node& self) {
    accumulate(*pa, Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {pa}, [pa](Node& self) {
    Matrix g = self.grad.col(0).replicate(1, pa->value.cols());
    accumulate(*pa, g);
  });
}

Var squared_norm(const Var& a) { return sum(hadamard(a, a)); }

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  auto pa = a.node();
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {pa}, [pa, start, count](Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    pa->grad.middleCols(start, count) += self.grad;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index total = 0;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
    nodes.push_back(p.node());
  }
  Matrix out(rows, total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_result(std::move(out), nodes, [nodes](Node& self) {
    Eigen::Index off = 0;
    for (const auto& n : nodes) {
      const Eigen::Index w = n->value.cols();
      if (n->requires_grad) accumulate(*n, self.grad.middleCols(off, w));
      off += w;
    }
  });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  auto pa = a.node();
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw std::out_of_range("gather_rows: index");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  }
  return make_result(std::move(out), {pa}, [pa, idx](Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      pa->grad.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var gather_block(const Var& a, const std::vector<int>& idx) {
  auto pa = a.node();
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix out(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) out(r, c) = a.value()(idx[r], idx[c]);
  }
  return make_result(std::move(out), {pa}, [pa, idx, k](Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (Eigen::Index r = 0; r < k; ++r) {
      for (Eigen::Index c = 0; c < k; ++c) pa->grad(idx[r], idx[c]) += self.grad(r, c);
    }
  });
}

Var distribute_rows(const Var& base, const Var& rows, const std::vector<int>& idx) {
  if (rows.rows() != static_cast<Eigen::Index>(idx.size()) || rows.cols() != base.cols()) {
    throw std::invalid_argument("distribute_rows: shape mismatch with index set");
  }
  auto pb = base.node(), pr = rows.node();
  Matrix out = base.value();
  std::vector<bool> overwritten(static_cast<std::size_t>(base.rows()), false);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.row(idx[r]) = rows.value().row(static_cast<Eigen::Index>(r));
    overwritten[static_cast<std::size_t>(idx[r])] = true;
  }
  return make_result(std::move(out), {pb, pr}, [pb, pr, idx, overwritten](Node& self) {
    if (pb->requires_grad) {
      Matrix g = self.grad;
      for (std::size_t r = 0; r < overwritten.size(); ++r) {
        if (overwritten[r]) g.row(static_cast<Eigen::Index>(r)).setZero();
      }
      accumulate(*pb, g);
    }
    if (pr->requires_grad) {
      Matrix g(static_cast<Eigen::Index>(idx.size()), self.grad.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        g.row(static_cast<Eigen::Index>(r)) = self.grad.row(idx[r]);
      }
      accumulate(*pr, g);
    }
  });
}

Var l2_normalize(const Var& a) {
  auto pa = a.node();
  const double norm = a.value().norm();
  if (norm == 0.0) throw std::invalid_argument("l2_normalize: zero vector");
  return make_result(a.value() / norm, {pa}, [pa, norm](Node& self) {
    const double dot = self.grad.cwiseProduct(self.value).sum();
    accumulate(*pa, (self.grad - self.value * dot) / norm);
  });
}

Var masked_row_softmax(const Var& scores, const BoolMatrix& mask) {
  if (mask.rows() != scores.rows() || mask.cols() != scores.cols()) {
    throw std::invalid_argument("masked_row_softmax: mask shape mismatch");
  }
  auto ps = scores.node();
  const Matrix& s = scores.value();
  Matrix out = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (mask(i, j)) peak = std::max(peak, s(i, j));
    }
    if (!std::isfinite(peak)) {
      throw std::runtime_error("masked_row_softmax: row " + std::to_string(i) +
                               " has an empty neighbourhood");
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (mask(i, j)) {
        out(i, j) = std::exp(s(i, j) - peak);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return make_result(std::move(out), {ps}, [ps](Node& self) {
    // dS_ij = P_ij (G_ij - sum_k P_ik G_ik); masked entries have P = 0.
    Matrix pg = self.value.cwiseProduct(self.grad);
    Vector inner = pg.rowwise().sum();
    Matrix g = pg - (self.value.array().colwise() * inner.array()).matrix();
    accumulate(*ps, g);
  });
}

Var row_softmax(const Var& scores) {
  return masked_row_softmax(scores, BoolMatrix::Constant(scores.rows(), scores.cols(), true));
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  if (gamma.rows() != 1 || gamma.cols() != a.cols() || beta.rows() != 1 ||
      beta.cols() != a.cols()) {
    throw std::invalid_argument("layer_norm_rows: gamma/beta width mismatch");
  }
  auto pa = a.node(), pg = gamma.node(), pb = beta.node();
  const Eigen::Index n = a.rows(), d = a.cols();
  Matrix normed(n, d);
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normed.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (normed.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {pa, pg, pb},
                     [pa, pg, pb, normed, inv_std, d](Node& self) {
                       if (pg->requires_grad) {
                         accumulate(*pg, self.grad.cwiseProduct(normed).colwise().sum());
                       }
                       if (pb->requires_grad) accumulate(*pb, self.grad.colwise().sum());
                       if (pa->requires_grad) {
                         Matrix gx = (self.grad.array().rowwise() * pg->value.row(0).array()).matrix();
                         Matrix g(gx.rows(), d);
                         for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                           const double m1 = gx.row(i).mean();
                           const double m2 = gx.row(i).cwiseProduct(normed.row(i)).mean();
                           g.row(i) = inv_std(i) *
                                      (gx.row(i).array() - m1 - normed.row(i).array() * m2).matrix();
                         }
                         accumulate(*pa, g);
                       }
                     });
}

Var weighted_sum(const Var& weights, const std::vector<Matrix>& mats) {
  if (weights.rows() != 1 || weights.cols() != static_cast<Eigen::Index>(mats.size()) ||
      mats.empty()) {
    throw std::invalid_argument("weighted_sum: weight count mismatch");
  }
  auto pw = weights.node();
  Matrix out = Matrix::Zero(mats.front().rows(), mats.front().cols());
  for (std::size_t u = 0; u < mats.size(); ++u) {
    out += weights.value()(0, static_cast<Eigen::Index>(u)) * mats[u];
  }
  // mats are copied into the closure only when a gradient is actually needed.
  if (!(grad_enabled() && pw->requires_grad)) return make_result(std::move(out), {pw}, nullptr);
  return make_result(std::move(out), {pw}, [pw, mats](Node& self) {
    Matrix g(1, static_cast<Eigen::Index>(mats.size()));
    for (std::size_t u = 0; u < mats.size(); ++u) {
      g(0, static_cast<Eigen::Index>(u)) = self.grad.cwiseProduct(mats[u]).sum();
    }
    accumulate(*pw, g);
  });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                          const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("softmax_cross_entropy: empty index set");
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  auto pl = logits.node();
  const Matrix& z = logits.value();
  Matrix probs = Matrix::Zero(z.rows(), z.cols());
  double loss = 0.0;
  for (int i : idx) {
    const double peak = z.row(i).maxCoeff();
    const double lse = peak + std::log((z.row(i).array() - peak).exp().sum());
    probs.row(i) = (z.row(i).array() - lse).exp();
    loss -= z(i, labels[static_cast<std::size_t>(i)]) - lse;
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  return make_result(Matrix::Constant(1, 1, loss * inv), {pl},
                     [pl, probs, labels, idx, inv](Node& self) {
                       Matrix g = Matrix::Zero(probs.rows(), probs.cols());
                       for (int i : idx) {
                         g.row(i) = probs.row(i);
                         g(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                       }
                       accumulate(*pl, g * (inv * self.grad(0, 0)));
                     });
}

Var pairwise_smoothness(const Var& adjacency, const Var& z) {
  const Eigen::Index n = z.rows();
  if (adjacency.rows() != n || adjacency.cols() != n) {
    throw std::invalid_argument("pairwise_smoothness: adjacency must be N x N");
  }
  auto pa = adjacency.node(), pz = z.node();
  const Matrix& A = adjacency.value();
  const Matrix& Z = z.value();
  const Vector sq = Z.rowwise().squaredNorm();
  // ||z_i - z_j||^2 = sq_i + sq_j - 2 <z_i, z_j>, exactly zero on the diagonal.
  Matrix dist = (-2.0 * (Z * Z.transpose())).colwise() + sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);
  dist.diagonal().setZero();
  const double inv = 1.0 / (2.0 * static_cast<double>(n) * static_cast<double>(n));
  const double value = inv * A.cwiseProduct(dist).sum();
  return make_result(Matrix::Constant(1, 1, value), {pa, pz},
                     [pa, pz, dist, inv](Node& self) {
                       const double up = self.grad(0, 0);
                       if (pa->requires_grad) accumulate(*pa, dist * (inv * up));
                       if (pz->requires_grad) {
                         const Matrix sym = pa->value + pa->value.transpose();
                         const Vector deg = sym.rowwise().sum();
                         Matrix g = (pz->value.array().colwise() * deg.array()).matrix() -
                                    sym * pz->value;
                         accumulate(*pz, g * (2.0 * inv * up));
                       }
                     });
}

}  // namespace mmgt::ad
