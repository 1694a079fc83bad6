#include "mmgt/objective.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/optim.hpp"

#include <cmath>

namespace mmgt {

HeadParams HeadParams::random(Eigen::Index input_dim, Eigen::Index hidden_dim, Rng& rng) {
  HeadParams h;
  h.w1 = glorot_parameter(input_dim, hidden_dim, rng);
  h.b1 = zeros_parameter(1, hidden_dim);
  h.w2 = glorot_parameter(hidden_dim, 2, rng);
  h.b2 = zeros_parameter(1, 2);
  return h;
}

std::vector<ad::Var> HeadParams::parameters() const { return {w1, b1, w2, b2}; }

HeadOutput classification_head(const ad::Var& z, const HeadParams& head, const std::vector<int>& labels,
                               const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw ValidationError("classification head: empty training mask");
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw ValidationError("classification head: label count does not match node count");
  }
  HeadOutput out;
  const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(z, head.w1), head.b1));
  out.logits = ad::add_row(ad::matmul(hidden, head.w2), head.b2);
  out.ce = ad::softmax_cross_entropy(out.logits, labels, train_idx);
  return out;
}

ad::Var degree_regularization(const ad::Var& adjacency) {
  const ad::Var logs = ad::log(ad::row_sum(adjacency), kDegreeGuard);
  return ad::scale(ad::sum(logs), -1.0 / static_cast<double>(adjacency.rows()));
}

GraphRegularization graph_regularization(const ad::Var& z, const ad::Var& adjacency) {
  if (adjacency.rows() != z.rows() || adjacency.cols() != z.rows()) {
    throw ValidationError("graph regularisation: adjacency does not match embedding rows");
  }
  return {ad::pairwise_smoothness(adjacency, z), degree_regularization(adjacency)};
}

namespace {

double checked(const ad::Var& term, const char* name) {
  if (!term.valid()) return 0.0;
  const double v = term.scalar();
  if (!std::isfinite(v)) throw RuntimeFailure(std::string("non-finite loss component: ") + name);
  return v;
}

void accumulate_term(ad::Var& total, const ad::Var& term) {
  total = total.valid() ? ad::add(total, term) : term;
}

}  // namespace

Objective total_objective(const ObjectiveTerms& terms, const ObjectiveWeights& weights) {
  if (!terms.ce.valid() || !terms.omega.valid()) {
    throw ValidationError("objective needs the cross-entropy and contribution weights");
  }
  Objective obj;
  auto& b = obj.breakdown;
  b.weights = weights;
  b.ce = checked(terms.ce, "l_ce");
  b.smh_img = checked(terms.smh_img, "l_smh_img");
  b.smh_non = checked(terms.smh_non, "l_smh_non");
  b.deg = checked(terms.deg, "l_deg");
  b.reward = checked(terms.reward, "l_r");
  b.omega_img = terms.omega.value()(0, 0);
  b.omega_non = terms.omega.value()(0, 1);
  if (!std::isfinite(b.omega_img) || !std::isfinite(b.omega_non)) {
    throw RuntimeFailure("non-finite loss component: omega");
  }

  ad::Var group_img, group_non;
  if (terms.smh_img.valid()) accumulate_term(group_img, ad::scale(terms.smh_img, weights.lambda));
  if (terms.smh_non.valid()) accumulate_term(group_non, ad::scale(terms.smh_non, weights.lambda));
  if (terms.deg.valid()) {
    accumulate_term(group_img, ad::scale(terms.deg, weights.mu));
    accumulate_term(group_non, ad::scale(terms.deg, weights.mu));
  }
  if (terms.reward.valid()) accumulate_term(group_non, ad::scale(terms.reward, weights.eta));

  ad::Var total = terms.ce;
  if (group_img.valid()) {
    total = ad::add(total, ad::mul_scalar(group_img, ad::slice_cols(terms.omega, 0, 1)));
  }
  if (group_non.valid()) {
    total = ad::add(total, ad::mul_scalar(group_non, ad::slice_cols(terms.omega, 1, 1)));
  }
  obj.total = total;
  b.total = checked(total, "l_total");
  return obj;
}

}  // namespace mmgt
