#pragma once

// Brings both modalities to a common width d: imaging features are reduced by
// recursive feature elimination, phenotype vectors are lifted by a pretrained
// (variational) reconstructor.

#include "mmgt/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmgt {

struct RfeReducer {
  std::vector<bool> selected_mask;
  int target_dim = 0;
  double elimination_step = 0.1;
  std::uint64_t fit_seed = 0;

  int input_dim() const { return static_cast<int>(selected_mask.size()); }
  std::vector<int> selected_columns() const;
};

/// Standardised ridge classifier weights (targets +/-1, intercept by centring).
Vector ridge_classifier_weights(const Matrix& features, const std::vector<int>& labels,
                                double ridge = 1.0);

/// Repeatedly fits the ridge scorer and drops the `step` fraction of surviving
/// features with the smallest |weight| until target_dim remain.
RfeReducer fit_rfe(const Matrix& train_features, const std::vector<int>& train_labels,
                   int target_dim, double step = 0.1, std::uint64_t seed = 0,
                   double ridge = 1.0);

/// Selected columns in original order.
Matrix apply_rfe(const RfeReducer& reducer, const Matrix& features);

enum class ReconstructorVariant { vae, mlp, ae, none };

const char* to_string(ReconstructorVariant v);
ReconstructorVariant reconstructor_variant_from_string(const std::string& name);

struct ReconstructorConfig {
  ReconstructorVariant variant = ReconstructorVariant::vae;
  int latent_dim = 500;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  int epochs = 3000;
  std::uint64_t seed = 0;
  std::string cohort_id = "unspecified";
};

struct ReconstructionTracePoint {
  int epoch = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// KL(N(mu, exp(logvar)) || N(0, I)), averaged over rows.
double gaussian_kl(const Matrix& mu, const Matrix& logvar);

/// Hidden width used by the reconstructor for a given input width.
int reconstructor_hidden_width(int input_dim);

/// Frozen non-imaging lifter. Instances only come out of pretrain() or load(),
/// and nothing mutates their parameters afterwards.
class Reconstructor {
 public:
  static Reconstructor pretrain(const Matrix& nonimaging, const ReconstructorConfig& config);
  static Reconstructor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Posterior mean (VAE), bottleneck code (AE), random lift (MLP) or zero-padded
  /// standardised input (none). Deterministic.
  Matrix encode(const Matrix& nonimaging) const;

  /// Decoder output for a latent matrix (VAE/AE only).
  Matrix decode(const Matrix& latent) const;

  bool frozen() const { return true; }
  int input_dim() const { return input_dim_; }
  int latent_dim() const { return config_.latent_dim; }
  const ReconstructorConfig& config() const { return config_; }
  const std::vector<ReconstructionTracePoint>& trace() const { return trace_; }

 private:
  Reconstructor() = default;
  Matrix standardize(const Matrix& x) const;

  ReconstructorConfig config_;
  int input_dim_ = 0;
  int hidden_dim_ = 0;
  RowVector input_mean_;
  RowVector input_scale_;
  // encoder: W1 b1 (-> hidden), Wmu bmu, Wlv blv; decoder: W3 b3, W4 b4
  std::vector<Matrix> weights_;
  std::vector<ReconstructionTracePoint> trace_;
};

}  // namespace mmgt
