#pragma once

// Affinity metric reward system: reward/penalty/motivation tables over subject
// pairs, simplex attribute weights, the phenotype affinity matrix C and the
// value Q whose reciprocal is the reward regulariser.

#include "mmgt/autodiff.hpp"
#include "mmgt/data.hpp"

#include <cstdint>
#include <vector>

namespace mmgt {

enum class SplitRole : std::uint8_t { train, val, test };

/// Per-subject roles for one fold.
std::vector<SplitRole> split_roles(std::size_t n_subjects, const Fold& fold);

using IntMatrix = Eigen::MatrixXi;

struct RewardTables {
  std::vector<IntMatrix> reward;      // R_u
  std::vector<IntMatrix> penalty;     // P_u
  std::vector<IntMatrix> motivation;  // M_u

  std::size_t attributes() const { return reward.size(); }
  Eigen::Index subjects() const { return reward.empty() ? 0 : reward.front().rows(); }
  IntMatrix reward_total() const;
  IntMatrix penalty_total() const;
  IntMatrix motivation_total() const;
};

/// Per-attribute coefficients; reward > 0, penalty < 0, motivation > 0 and
/// reward + motivation < |penalty|.
struct BetaCoefficients {
  double reward = 1.0;
  double penalty = -2.0;
  double motivation = 0.5;
};

void validate_betas(const std::vector<BetaCoefficients>& betas);

/// Pairs (i != j) whose u-th attribute values match enter R_u when both are
/// non-test with equal labels, P_u when both are non-test with different
/// labels, and M_u when both are test subjects. Test labels are never read.
RewardTables build_reward_tables(const Cohort& cohort, const std::vector<SplitRole>& roles);

/// beta_r R_u + beta_p P_u + beta_m M_u for every attribute.
std::vector<Matrix> attribute_terms(const RewardTables& tables,
                                    const std::vector<BetaCoefficients>& betas);

/// C_ij = sigmoid(sum_u alpha_u term_u(i,j)).
Matrix compute_affinity_matrix(const RewardTables& tables, const Vector& alpha,
                               const std::vector<BetaCoefficients>& betas);

/// S_u = sum_ij ReLU(beta_r R_u + beta_p P_u) (motivation excluded).
Vector value_sums(const RewardTables& tables, const std::vector<BetaCoefficients>& betas);

/// Q = (1/N^2) sum_u alpha_u S_u.
double compute_q_value(const RewardTables& tables, const Vector& alpha,
                       const std::vector<BetaCoefficients>& betas);

inline constexpr double kRewardGuard = 1e-8;

double reward_loss(double q_value, double guard = kRewardGuard);

/// Simplex weights over v attributes, parameterised by softmax logits.
class AlphaWeights {
 public:
  explicit AlphaWeights(std::size_t n_attributes);

  Vector weights() const;
  ad::Var weights_var() const;
  ad::Var& logits() { return logits_; }
  const ad::Var& logits() const { return logits_; }

 private:
  ad::Var logits_;
};

namespace amrs_ops {

ad::Var affinity(const ad::Var& alpha, const std::vector<Matrix>& terms);
ad::Var q_value(const ad::Var& alpha, const Vector& sums, Eigen::Index n_subjects);
ad::Var reward_loss(const ad::Var& q_value, double guard = kRewardGuard);

}  // namespace amrs_ops

}  // namespace mmgt
