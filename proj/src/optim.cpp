#include "mmgt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mmgt {

ad::Var glorot_parameter(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return ad::parameter(std::move(m));
}

ad::Var zeros_parameter(Eigen::Index rows, Eigen::Index cols) {
  return ad::parameter(Matrix::Zero(rows, cols));
}

ad::Var constant_parameter(Eigen::Index rows, Eigen::Index cols, double value) {
  return ad::parameter(Matrix::Constant(rows, cols, value));
}

AdamOptimizer::AdamOptimizer(std::vector<ad::Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("AdamOptimizer: non-trainable parameter");
    first_moment_.push_back(Matrix::Zero(p.rows(), p.cols()));
    second_moment_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamOptimizer::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& w = params_[i].mutable_value();
    const Matrix& g = params_[i].grad();
    if (config_.weight_decay > 0.0) w *= (1.0 - config_.learning_rate * config_.weight_decay);
    first_moment_[i] = config_.beta1 * first_moment_[i] + (1.0 - config_.beta1) * g;
    second_moment_[i] =
        config_.beta2 * second_moment_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    w.array() -= config_.learning_rate * (first_moment_[i].array() / bc1) /
                 ((second_moment_[i].array() / bc2).sqrt() + config_.epsilon);
  }
}

std::vector<Matrix> snapshot(const std::vector<ad::Var>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

void restore(std::vector<ad::Var>& params, const std::vector<Matrix>& values) {
  if (params.size() != values.size()) throw std::invalid_argument("restore: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = values[i];
}

}  // namespace mmgt
