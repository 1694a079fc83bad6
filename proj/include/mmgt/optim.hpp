#pragma once

#include "mmgt/autodiff.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mmgt {

/// Glorot-uniform initialised trainable matrix.
ad::Var glorot_parameter(Eigen::Index rows, Eigen::Index cols, Rng& rng);
ad::Var zeros_parameter(Eigen::Index rows, Eigen::Index cols);
ad::Var constant_parameter(Eigen::Index rows, Eigen::Index cols, double value);

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay (the decay term is applied to the weights
/// directly, outside the moment estimates).
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Var> params, AdamConfig config);

  void zero_grad();
  void step();
  std::int64_t steps_taken() const { return step_; }
  const std::vector<ad::Var>& params() const { return params_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

/// Value snapshot of a parameter list, used for best-epoch restoration.
std::vector<Matrix> snapshot(const std::vector<ad::Var>& params);
void restore(std::vector<ad::Var>& params, const std::vector<Matrix>& values);

}  // namespace mmgt
