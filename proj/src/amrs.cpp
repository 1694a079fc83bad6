#include "mmgt/amrs.hpp"

#include "mmgt/errors.hpp"

#include <cmath>

namespace mmgt {

std::vector<SplitRole> split_roles(std::size_t n_subjects, const Fold& fold) {
  std::vector<SplitRole> roles(n_subjects, SplitRole::train);
  for (int i : fold.val) roles.at(static_cast<std::size_t>(i)) = SplitRole::val;
  for (int i : fold.test) roles.at(static_cast<std::size_t>(i)) = SplitRole::test;
  return roles;
}

namespace {

IntMatrix total(const std::vector<IntMatrix>& parts) {
  if (parts.empty()) return {};
  IntMatrix sum = IntMatrix::Zero(parts.front().rows(), parts.front().cols());
  for (const auto& p : parts) sum += p;
  return sum;
}

}  // namespace

IntMatrix RewardTables::reward_total() const { return total(reward); }
IntMatrix RewardTables::penalty_total() const { return total(penalty); }
IntMatrix RewardTables::motivation_total() const { return total(motivation); }

void validate_betas(const std::vector<BetaCoefficients>& betas) {
  for (std::size_t u = 0; u < betas.size(); ++u) {
    const auto& b = betas[u];
    if (!(b.reward > 0.0 && b.motivation > 0.0 && b.penalty < 0.0)) {
      throw ValidationError("beta coefficients for attribute " + std::to_string(u) +
                            " need reward > 0, motivation > 0, penalty < 0");
    }
    if (!(b.reward + b.motivation < std::abs(b.penalty))) {
      throw ValidationError("beta coefficients for attribute " + std::to_string(u) +
                            " violate reward + motivation < |penalty|");
    }
  }
}

RewardTables build_reward_tables(const Cohort& cohort, const std::vector<SplitRole>& roles) {
  const auto n = static_cast<Eigen::Index>(cohort.size());
  if (roles.size() != cohort.size()) throw ValidationError("reward tables: role count mismatch");
  RewardTables tables;
  for (std::size_t u = 0; u < cohort.schema.size(); ++u) {
    const auto& attr = cohort.schema.attributes[u];
    double tolerance = 0.0;
    if (attr.kind == AttributeKind::continuous) {
      if (!attr.match_tolerance) {
        throw ValidationError("continuous attribute '" + attr.name + "' has no match tolerance");
      }
      tolerance = *attr.match_tolerance;
    }
    IntMatrix r = IntMatrix::Zero(n, n), p = IntMatrix::Zero(n, n), m = IntMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& ri = cohort.records[static_cast<std::size_t>(i)];
      const SplitRole role_i = roles[static_cast<std::size_t>(i)];
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const auto& rj = cohort.records[static_cast<std::size_t>(j)];
        const double a = ri.phenotypes[u], b = rj.phenotypes[u];
        const bool match = attr.kind == AttributeKind::categorical ? a == b
                                                                   : std::abs(a - b) <= tolerance;
        if (!match) continue;
        const SplitRole role_j = roles[static_cast<std::size_t>(j)];
        if (role_i == SplitRole::test && role_j == SplitRole::test) {
          m(i, j) = m(j, i) = 1;
        } else if (role_i != SplitRole::test && role_j != SplitRole::test) {
          if (ri.label == rj.label) {
            r(i, j) = r(j, i) = 1;
          } else {
            p(i, j) = p(j, i) = 1;
          }
        }
      }
    }
    tables.reward.push_back(std::move(r));
    tables.penalty.push_back(std::move(p));
    tables.motivation.push_back(std::move(m));
  }
  return tables;
}

std::vector<Matrix> attribute_terms(const RewardTables& tables,
                                    const std::vector<BetaCoefficients>& betas) {
  if (betas.size() != tables.attributes()) {
    throw ValidationError("beta count " + std::to_string(betas.size()) + " != attribute count " +
                          std::to_string(tables.attributes()));
  }
  std::vector<Matrix> terms;
  for (std::size_t u = 0; u < tables.attributes(); ++u) {
    terms.push_back(betas[u].reward * tables.reward[u].cast<double>() +
                    betas[u].penalty * tables.penalty[u].cast<double>() +
                    betas[u].motivation * tables.motivation[u].cast<double>());
  }
  return terms;
}

Matrix compute_affinity_matrix(const RewardTables& tables, const Vector& alpha,
                               const std::vector<BetaCoefficients>& betas) {
  if (static_cast<std::size_t>(alpha.size()) != tables.attributes()) {
    throw ValidationError("alpha length mismatch");
  }
  const auto terms = attribute_terms(tables, betas);
  Matrix logits = Matrix::Zero(tables.subjects(), tables.subjects());
  for (std::size_t u = 0; u < terms.size(); ++u) logits += alpha(static_cast<Eigen::Index>(u)) * terms[u];
  Matrix c = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
  // Vectorised exp can round the two triangles differently.
  c.triangularView<Eigen::StrictlyLower>() = c.transpose();
  return c;
}

Vector value_sums(const RewardTables& tables, const std::vector<BetaCoefficients>& betas) {
  if (betas.size() != tables.attributes()) throw ValidationError("beta count mismatch");
  Vector sums(static_cast<Eigen::Index>(tables.attributes()));
  for (std::size_t u = 0; u < tables.attributes(); ++u) {
    const Matrix inner = betas[u].reward * tables.reward[u].cast<double>() +
                         betas[u].penalty * tables.penalty[u].cast<double>();
    sums(static_cast<Eigen::Index>(u)) = inner.cwiseMax(0.0).sum();
  }
  return sums;
}

double compute_q_value(const RewardTables& tables, const Vector& alpha,
                       const std::vector<BetaCoefficients>& betas) {
  const double n = static_cast<double>(tables.subjects());
  return alpha.dot(value_sums(tables, betas)) / (n * n);
}

double reward_loss(double q_value, double guard) { return 1.0 / (q_value + guard); }

AlphaWeights::AlphaWeights(std::size_t n_attributes)
    : logits_(ad::parameter(Matrix::Zero(1, static_cast<Eigen::Index>(n_attributes)))) {
  if (n_attributes == 0) throw ValidationError("AMRS needs at least one attribute");
}

Vector AlphaWeights::weights() const {
  ad::NoGradGuard guard;
  return ad::row_softmax(logits_).value().row(0).transpose();
}

ad::Var AlphaWeights::weights_var() const { return ad::row_softmax(logits_); }

namespace amrs_ops {

ad::Var affinity(const ad::Var& alpha, const std::vector<Matrix>& terms) {
  // Averaging with the transpose keeps C exactly symmetric under vectorised rounding.
  ad::Var c = ad::sigmoid(ad::weighted_sum(alpha, terms));
  return ad::scale(ad::add(c, ad::transpose(c)), 0.5);
}

ad::Var q_value(const ad::Var& alpha, const Vector& sums, Eigen::Index n_subjects) {
  const double n = static_cast<double>(n_subjects);
  return ad::scale(ad::matmul(alpha, ad::constant(sums)), 1.0 / (n * n));
}

ad::Var reward_loss(const ad::Var& q_value, double guard) { return ad::reciprocal(q_value, guard); }

}  // namespace amrs_ops

}  // namespace mmgt
