#include "mmgt/alignment.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mmgt {

std::vector<int> RfeReducer::selected_columns() const {
  std::vector<int> cols;
  for (std::size_t k = 0; k < selected_mask.size(); ++k) {
    if (selected_mask[k]) cols.push_back(static_cast<int>(k));
  }
  return cols;
}

Vector ridge_classifier_weights(const Matrix& features, const std::vector<int>& labels,
                                double ridge) {
  const Eigen::Index n = features.rows();
  const Eigen::Index p = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("ridge classifier: label count mismatch");
  }
  const RowVector mean = features.colwise().mean();
  Matrix x = features.rowwise() - mean;
  RowVector sd = (x.cwiseAbs2().colwise().sum() / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index k = 0; k < p; ++k) {
    if (sd(k) > 1e-12) {
      x.col(k) /= sd(k);
    } else {
      x.col(k).setZero();
    }
  }
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  y.array() -= y.mean();
  if (n < p) {
    Matrix gram = x * x.transpose();
    gram.diagonal().array() += ridge;
    return x.transpose() * gram.ldlt().solve(y);
  }
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  return gram.ldlt().solve(x.transpose() * y);
}

RfeReducer fit_rfe(const Matrix& train_features, const std::vector<int>& train_labels,
                   int target_dim, double step, std::uint64_t seed, double ridge) {
  const auto d1 = static_cast<int>(train_features.cols());
  if (target_dim <= 0 || target_dim >= d1) {
    throw ValidationError("RFE target dimension " + std::to_string(target_dim) +
                          " must lie in [1, " + std::to_string(d1 - 1) + "]");
  }
  if (!(step > 0.0 && step < 1.0)) throw ValidationError("RFE step must lie in (0,1)");
  if (static_cast<Eigen::Index>(train_labels.size()) != train_features.rows()) {
    throw ValidationError("RFE: label count mismatch");
  }
  const bool has0 = std::count(train_labels.begin(), train_labels.end(), 0) > 0;
  const bool has1 = std::count(train_labels.begin(), train_labels.end(), 1) > 0;
  if (!has0 || !has1) throw ValidationError("RFE: training set must contain both classes");

  std::vector<int> surviving(static_cast<std::size_t>(d1));
  std::iota(surviving.begin(), surviving.end(), 0);
  while (static_cast<int>(surviving.size()) > target_dim) {
    Matrix sub(train_features.rows(), static_cast<Eigen::Index>(surviving.size()));
    for (std::size_t k = 0; k < surviving.size(); ++k) {
      sub.col(static_cast<Eigen::Index>(k)) = train_features.col(surviving[k]);
    }
    const Vector w = ridge_classifier_weights(sub, train_labels, ridge);
    const int excess = static_cast<int>(surviving.size()) - target_dim;
    const int drop = std::min(
        excess, std::max(1, static_cast<int>(std::floor(step * static_cast<double>(surviving.size())))));
    std::vector<std::size_t> order(surviving.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(w(static_cast<Eigen::Index>(a))) < std::abs(w(static_cast<Eigen::Index>(b)));
    });
    std::vector<bool> removed(surviving.size(), false);
    for (int k = 0; k < drop; ++k) removed[order[static_cast<std::size_t>(k)]] = true;
    std::vector<int> next;
    for (std::size_t k = 0; k < surviving.size(); ++k) {
      if (!removed[k]) next.push_back(surviving[k]);
    }
    surviving = std::move(next);
  }

  RfeReducer reducer;
  reducer.selected_mask.assign(static_cast<std::size_t>(d1), false);
  for (int k : surviving) reducer.selected_mask[static_cast<std::size_t>(k)] = true;
  reducer.target_dim = target_dim;
  reducer.elimination_step = step;
  reducer.fit_seed = seed;
  return reducer;
}

Matrix apply_rfe(const RfeReducer& reducer, const Matrix& features) {
  if (features.cols() != reducer.input_dim()) {
    throw ValidationError("apply_rfe: expected " + std::to_string(reducer.input_dim()) +
                          " columns, got " + std::to_string(features.cols()));
  }
  const auto cols = reducer.selected_columns();
  Matrix out(features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = features.col(cols[k]);
  }
  return out;
}

const char* to_string(ReconstructorVariant v) {
  switch (v) {
    case ReconstructorVariant::vae: return "vae";
    case ReconstructorVariant::mlp: return "mlp";
    case ReconstructorVariant::ae: return "ae";
    case ReconstructorVariant::none: return "none";
  }
  return "?";
}

ReconstructorVariant reconstructor_variant_from_string(const std::string& name) {
  if (name == "vae") return ReconstructorVariant::vae;
  if (name == "mlp") return ReconstructorVariant::mlp;
  if (name == "ae") return ReconstructorVariant::ae;
  if (name == "none") return ReconstructorVariant::none;
  throw ValidationError("unknown reconstructor variant '" + name + "'");
}

double gaussian_kl(const Matrix& mu, const Matrix& logvar) {
  const auto per_entry = 1.0 + logvar.array() - mu.array().square() - logvar.array().exp();
  return -0.5 * per_entry.sum() / static_cast<double>(mu.rows());
}

int reconstructor_hidden_width(int input_dim) { return std::max(16, 2 * input_dim); }

namespace {

enum Slot { kW1, kB1, kWmu, kBmu, kWlv, kBlv, kW3, kB3, kW4, kB4, kSlotCount };

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

}  // namespace

Matrix Reconstructor::standardize(const Matrix& x) const {
  if (x.cols() != input_dim_) {
    throw ValidationError("reconstructor: expected " + std::to_string(input_dim_) +
                          " phenotype columns, got " + std::to_string(x.cols()));
  }
  return (x.rowwise() - input_mean_).array().rowwise() / input_scale_.array();
}

Reconstructor Reconstructor::pretrain(const Matrix& nonimaging, const ReconstructorConfig& config) {
  if (nonimaging.cols() < 1) throw ValidationError("reconstructor: need at least one attribute");
  if (nonimaging.rows() < 2) throw ValidationError("reconstructor: need at least two rows");
  if (config.epochs < 1) throw ValidationError("reconstructor: epochs must be >= 1");
  if (config.latent_dim < 1) throw ValidationError("reconstructor: latent_dim must be >= 1");
  if (!nonimaging.allFinite()) throw ValidationError("reconstructor: non-finite input");

  Reconstructor model;
  model.config_ = config;
  model.input_dim_ = static_cast<int>(nonimaging.cols());
  model.hidden_dim_ = reconstructor_hidden_width(model.input_dim_);
  model.input_mean_ = nonimaging.colwise().mean();
  Matrix centered = nonimaging.rowwise() - model.input_mean_;
  model.input_scale_ =
      (centered.cwiseAbs2().colwise().sum() / static_cast<double>(nonimaging.rows())).cwiseSqrt();
  for (Eigen::Index k = 0; k < model.input_scale_.size(); ++k) {
    if (model.input_scale_(k) < 1e-12) model.input_scale_(k) = 1.0;
  }

  const int d2 = model.input_dim_, h = model.hidden_dim_, d = config.latent_dim;
  if (config.variant == ReconstructorVariant::none) {
    if (d2 > d) throw ValidationError("reconstructor 'none': latent_dim smaller than input width");
    return model;
  }

  Rng rng(config.seed);
  std::vector<ad::Var> params(kSlotCount);
  params[kW1] = glorot_parameter(d2, h, rng);
  params[kB1] = zeros_parameter(1, h);
  params[kWmu] = glorot_parameter(h, d, rng);
  params[kBmu] = zeros_parameter(1, d);
  params[kWlv] = glorot_parameter(h, d, rng);
  params[kBlv] = zeros_parameter(1, d);
  params[kW3] = glorot_parameter(d, h, rng);
  params[kB3] = zeros_parameter(1, h);
  params[kW4] = glorot_parameter(h, d2, rng);
  params[kB4] = zeros_parameter(1, d2);

  if (config.variant == ReconstructorVariant::mlp) {
    // Untrained random lift: keep only the encoder half.
    for (int s = 0; s < kSlotCount; ++s) model.weights_.push_back(params[static_cast<std::size_t>(s)].value());
    return model;
  }

  const bool variational = config.variant == ReconstructorVariant::vae;
  std::vector<ad::Var> trainable = params;
  if (!variational) {
    trainable.erase(trainable.begin() + kWlv, trainable.begin() + kBlv + 1);
  }
  AdamOptimizer opt(trainable, {config.learning_rate, config.weight_decay});
  const ad::Var x = ad::constant(model.standardize(nonimaging));
  const double inv_n = 1.0 / static_cast<double>(nonimaging.rows());
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.zero_grad();
    ad::Var hidden = ad::relu(ad::add_row(ad::matmul(x, params[kW1]), params[kB1]));
    ad::Var mu = ad::add_row(ad::matmul(hidden, params[kWmu]), params[kBmu]);
    ad::Var z = mu;
    ad::Var kl = ad::scalar_constant(0.0);
    if (variational) {
      ad::Var logvar = ad::add_row(ad::matmul(hidden, params[kWlv]), params[kBlv]);
      Matrix eps(mu.rows(), mu.cols());
      for (Eigen::Index c = 0; c < eps.cols(); ++c) {
        for (Eigen::Index r = 0; r < eps.rows(); ++r) eps(r, c) = gauss(rng);
      }
      ad::Var std_dev = ad::exp(ad::scale(logvar, 0.5));
      z = ad::add(mu, ad::hadamard(std_dev, ad::constant(std::move(eps))));
      // -0.5 * sum(1 + logvar - mu^2 - exp(logvar)) / n
      ad::Var inner = ad::sub(ad::add_scalar(logvar, 1.0),
                              ad::add(ad::hadamard(mu, mu), ad::exp(logvar)));
      kl = ad::scale(ad::sum(inner), -0.5 * inv_n);
    }
    ad::Var dec_hidden = ad::relu(ad::add_row(ad::matmul(z, params[kW3]), params[kB3]));
    ad::Var recon_x = ad::add_row(ad::matmul(dec_hidden, params[kW4]), params[kB4]);
    ad::Var diff = ad::sub(recon_x, x);
    ad::Var recon = ad::scale(ad::squared_norm(diff), inv_n);
    ad::Var loss = ad::add(recon, kl);
    if (!std::isfinite(loss.scalar())) {
      throw RuntimeFailure("reconstructor pretraining diverged at epoch " +
                           std::to_string(epoch) + " (reconstruction=" +
                           std::to_string(recon.scalar()) + ", kl=" +
                           std::to_string(kl.scalar()) + ")");
    }
    model.trace_.push_back({epoch, recon.scalar(), kl.scalar()});
    ad::backward(loss);
    opt.step();
  }
  for (const auto& p : params) model.weights_.push_back(p.value());
  return model;
}

Matrix Reconstructor::encode(const Matrix& nonimaging) const {
  const Matrix x = standardize(nonimaging);
  if (config_.variant == ReconstructorVariant::none) {
    Matrix out = Matrix::Zero(x.rows(), config_.latent_dim);
    out.leftCols(x.cols()) = x;
    return out;
  }
  Matrix hidden = relu((x * weights_[kW1]).rowwise() + weights_[kB1].row(0));
  return (hidden * weights_[kWmu]).rowwise() + weights_[kBmu].row(0);
}

Matrix Reconstructor::decode(const Matrix& latent) const {
  if (config_.variant != ReconstructorVariant::vae && config_.variant != ReconstructorVariant::ae) {
    throw ValidationError("reconstructor variant has no decoder");
  }
  Matrix hidden = relu((latent * weights_[kW3]).rowwise() + weights_[kB3].row(0));
  Matrix standardized = (hidden * weights_[kW4]).rowwise() + weights_[kB4].row(0);
  return (standardized.array().rowwise() * input_scale_.array()).matrix().rowwise() + input_mean_;
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'M', 'G', 'T', 'R', 'E', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("reconstructor checkpoint truncated");
  return v;
}

void put_matrix(std::ofstream& out, const Matrix& m) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

Matrix take_matrix(std::ifstream& in) {
  const auto rows = take<std::uint64_t>(in);
  const auto cols = take<std::uint64_t>(in);
  if (rows > (1u << 24) || cols > (1u << 24)) throw ValidationError("checkpoint matrix too large");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = take<double>(in);
  }
  return m;
}

}  // namespace

void Reconstructor::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.variant));
  put<std::int64_t>(out, input_dim_);
  put<std::int64_t>(out, hidden_dim_);
  put<std::int64_t>(out, config_.latent_dim);
  put<double>(out, config_.learning_rate);
  put<double>(out, config_.weight_decay);
  put<std::int64_t>(out, config_.epochs);
  put<std::uint64_t>(out, config_.seed);
  put<std::uint64_t>(out, config_.cohort_id.size());
  out.write(config_.cohort_id.data(), static_cast<std::streamsize>(config_.cohort_id.size()));
  put_matrix(out, input_mean_);
  put_matrix(out, input_scale_);
  put<std::uint64_t>(out, weights_.size());
  for (const auto& w : weights_) put_matrix(out, w);
}

Reconstructor Reconstructor::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ValidationError(path.string() + ": not a reconstructor checkpoint");
  }
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
  }
  Reconstructor model;
  const auto variant = take<std::uint32_t>(in);
  if (variant > static_cast<std::uint32_t>(ReconstructorVariant::none)) {
    throw ValidationError("checkpoint: bad variant tag");
  }
  model.config_.variant = static_cast<ReconstructorVariant>(variant);
  model.input_dim_ = static_cast<int>(take<std::int64_t>(in));
  model.hidden_dim_ = static_cast<int>(take<std::int64_t>(in));
  model.config_.latent_dim = static_cast<int>(take<std::int64_t>(in));
  model.config_.learning_rate = take<double>(in);
  model.config_.weight_decay = take<double>(in);
  model.config_.epochs = static_cast<int>(take<std::int64_t>(in));
  model.config_.seed = take<std::uint64_t>(in);
  const auto id_len = take<std::uint64_t>(in);
  if (id_len > 4096) throw ValidationError("checkpoint: cohort id too long");
  model.config_.cohort_id.resize(id_len);
  in.read(model.config_.cohort_id.data(), static_cast<std::streamsize>(id_len));
  model.input_mean_ = take_matrix(in);
  model.input_scale_ = take_matrix(in);
  const auto count = take<std::uint64_t>(in);
  if (count != 0 && count != kSlotCount) throw ValidationError("checkpoint: bad weight count");
  for (std::uint64_t i = 0; i < count; ++i) model.weights_.push_back(take_matrix(in));
  return model;
}

}  // namespace mmgt
