#pragma once

#include "mmgt/autodiff.hpp"

#include <utility>
#include <vector>

namespace mmgt {

/// Affine maps producing the attention maps tau = tanh(Z W + b) for the shared
/// embedding and for each modality-specific embedding.
struct FusionParams {
  ad::Var w_sh, b_sh;
  ad::Var w_img, b_img;
  ad::Var w_non, b_non;

  static FusionParams random(Eigen::Index dim, Rng& rng);
  static FusionParams zeros(Eigen::Index dim);
  std::vector<ad::Var> parameters() const;
};

struct JointEmbedding {
  ad::Var z_img;
  ad::Var z_non;
  ad::Var z_sh;
  ad::Var z;
  ad::Var tau_sh;
  ad::Var tau_img;
  ad::Var tau_non;
};

JointEmbedding fuse_modalities(const ad::Var& z_img, const ad::Var& z_non, const FusionParams& params);

inline constexpr double kContributionGuard = 1e-12;

/// Softmax over f_psi = ||tau_psi||_F^2 / (||tau_sh||_F^2 + guard); returns a
/// 1x2 row (omega_img, omega_non).
ad::Var contribution_weights(const ad::Var& tau_img, const ad::Var& tau_non, const ad::Var& tau_sh);

std::pair<double, double> contribution_weights(const Matrix& tau_img, const Matrix& tau_non,
                                               const Matrix& tau_sh);

}  // namespace mmgt
