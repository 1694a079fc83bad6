#pragma once

#include "mmgt/autodiff.hpp"

#include <string>
#include <vector>

namespace mmgt {

/// Two-layer perceptron readout to two class logits.
struct HeadParams {
  ad::Var w1, b1, w2, b2;

  static HeadParams random(Eigen::Index input_dim, Eigen::Index hidden_dim, Rng& rng);
  std::vector<ad::Var> parameters() const;
};

struct HeadOutput {
  ad::Var logits;  // N x 2
  ad::Var ce;      // 1 x 1, mean over the training rows
};

/// All rows are scored; only rows in train_idx contribute to the loss.
HeadOutput classification_head(const ad::Var& z, const HeadParams& head, const std::vector<int>& labels,
                               const std::vector<int>& train_idx);

inline constexpr double kDegreeGuard = 1e-12;

struct GraphRegularization {
  ad::Var smoothness;  // (1/2N^2) sum_ij A_ij ||z_i - z_j||^2
  ad::Var degree;      // -(1/N) sum_i log(rowsum_i(A) + guard)
};

GraphRegularization graph_regularization(const ad::Var& z, const ad::Var& adjacency);
ad::Var degree_regularization(const ad::Var& adjacency);

struct ObjectiveWeights {
  double lambda = 1.0;
  double mu = 1e-4;
  double eta = 1e-2;

  static ObjectiveWeights abide() { return {1.0, 1e-4, 1e-2}; }
  static ObjectiveWeights adhd200() { return {1.0, 1e-1, 1e-2}; }
};

/// Components of the total objective. A term left invalid is treated as absent
/// (used by the single-modality ablations).
struct ObjectiveTerms {
  ad::Var ce;
  ad::Var smh_img;
  ad::Var smh_non;
  ad::Var deg;
  ad::Var reward;
  ad::Var omega;  // 1 x 2 (omega_img, omega_non)
};

struct LossBreakdown {
  double ce = 0.0;
  double smh_img = 0.0;
  double smh_non = 0.0;
  double deg = 0.0;
  double reward = 0.0;
  double total = 0.0;
  double omega_img = 0.0;
  double omega_non = 0.0;
  ObjectiveWeights weights;
};

struct Objective {
  ad::Var total;
  LossBreakdown breakdown;
};

/// ce + omega_img (lambda smh_img + mu deg) + omega_non (lambda smh_non + mu deg + eta L_r).
/// Throws RuntimeFailure naming the first non-finite component.
Objective total_objective(const ObjectiveTerms& terms, const ObjectiveWeights& weights);

}  // namespace mmgt
