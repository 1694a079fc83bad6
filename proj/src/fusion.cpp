#include "mmgt/fusion.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace mmgt {

FusionParams FusionParams::random(Eigen::Index dim, Rng& rng) {
  FusionParams p;
  p.w_sh = glorot_parameter(dim, dim, rng);
  p.b_sh = zeros_parameter(1, dim);
  p.w_img = glorot_parameter(dim, dim, rng);
  p.b_img = zeros_parameter(1, dim);
  p.w_non = glorot_parameter(dim, dim, rng);
  p.b_non = zeros_parameter(1, dim);
  return p;
}

FusionParams FusionParams::zeros(Eigen::Index dim) {
  FusionParams p;
  p.w_sh = zeros_parameter(dim, dim);
  p.b_sh = zeros_parameter(1, dim);
  p.w_img = zeros_parameter(dim, dim);
  p.b_img = zeros_parameter(1, dim);
  p.w_non = zeros_parameter(dim, dim);
  p.b_non = zeros_parameter(1, dim);
  return p;
}

std::vector<ad::Var> FusionParams::parameters() const {
  return {w_sh, b_sh, w_img, b_img, w_non, b_non};
}

JointEmbedding fuse_modalities(const ad::Var& z_img, const ad::Var& z_non, const FusionParams& params) {
  if (z_img.rows() != z_non.rows() || z_img.cols() != z_non.cols()) {
    throw ValidationError("fusion: modality embeddings differ in shape");
  }
  if (params.w_sh.rows() != z_img.cols()) {
    throw ValidationError("fusion: parameter width does not match embeddings");
  }
  JointEmbedding j;
  j.z_img = z_img;
  j.z_non = z_non;
  j.z_sh = ad::scale(ad::add(z_img, z_non), 0.5);
  j.tau_sh = ad::tanh(ad::add_row(ad::matmul(j.z_sh, params.w_sh), params.b_sh));
  j.tau_img = ad::tanh(ad::add_row(ad::matmul(z_img, params.w_img), params.b_img));
  j.tau_non = ad::tanh(ad::add_row(ad::matmul(z_non, params.w_non), params.b_non));
  j.z = ad::add(ad::add(ad::hadamard(j.tau_sh, j.z_sh), ad::hadamard(j.tau_img, z_img)),
                ad::hadamard(j.tau_non, z_non));
  return j;
}

ad::Var contribution_weights(const ad::Var& tau_img, const ad::Var& tau_non, const ad::Var& tau_sh) {
  if (tau_img.rows() != tau_sh.rows() || tau_img.cols() != tau_sh.cols() ||
      tau_non.rows() != tau_sh.rows() || tau_non.cols() != tau_sh.cols()) {
    throw ValidationError("contribution weights: attention maps differ in shape");
  }
  const ad::Var shared = ad::squared_norm(tau_sh);
  const ad::Var f_img = ad::divide(ad::squared_norm(tau_img), shared, kContributionGuard);
  const ad::Var f_non = ad::divide(ad::squared_norm(tau_non), shared, kContributionGuard);
  return ad::row_softmax(ad::concat_cols({f_img, f_non}));
}

std::pair<double, double> contribution_weights(const Matrix& tau_img, const Matrix& tau_non,
                                               const Matrix& tau_sh) {
  const double shared = tau_sh.squaredNorm() + kContributionGuard;
  const double f_img = tau_img.squaredNorm() / shared;
  const double f_non = tau_non.squaredNorm() / shared;
  const double peak = std::max(f_img, f_non);
  const double e_img = std::exp(f_img - peak), e_non = std::exp(f_non - peak);
  return {e_img / (e_img + e_non), e_non / (e_img + e_non)};
}

}  // namespace mmgt
