#include "doctest.h"
#include "support.hpp"

#include "mmgt/autodiff.hpp"
#include "mmgt/optim.hpp"

using namespace mmgt;
using mmgt::testing::check_gradients;
using mmgt::testing::random_matrix;

namespace {

ad::Var param(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  return ad::parameter(random_matrix(r, c, rng, scale));
}

// Fixed random projection turns any matrix output into a scalar loss.
ad::Var readout(const ad::Var& x, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::hadamard(x, ad::constant(random_matrix(x.rows(), x.cols(), rng))));
}

}  // namespace

TEST_CASE("elementwise and broadcast ops match central differences") {
  Rng rng(1);
  auto a = param(4, 3, rng);
  auto b = param(4, 3, rng);
  auto row = param(1, 3, rng);
  auto col = param(4, 1, rng);
  auto s = param(1, 1, rng);
  auto positive = ad::parameter(random_matrix(4, 3, rng).cwiseAbs().array() + 0.5);
  auto loss = [&] {
    ad::Var x = ad::add(a, b);
    x = ad::sub(x, ad::hadamard(a, b));
    x = ad::scale(x, 0.7);
    x = ad::add_scalar(x, 0.3);
    x = ad::mul_scalar(x, s);
    x = ad::add_row(x, row);
    x = ad::add_col(x, col);
    x = ad::mul_col(x, col);
    x = ad::add(x, ad::log(positive, 1e-3));
    x = ad::add(x, ad::reciprocal(positive, 0.1));
    x = ad::add(x, ad::divide(a, positive, 0.2));
    return readout(x, 11);
  };
  auto r = check_gradients(loss, {a, b, row, col, s, positive});
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("nonlinearities, reductions and structural ops match central differences") {
  Rng rng(2);
  auto a = param(5, 4, rng);
  auto w = param(4, 3, rng);
  auto loss = [&] {
    ad::Var h = ad::matmul(a, w);
    ad::Var parts = ad::concat_cols({ad::sigmoid(h), ad::tanh(h), ad::exp(ad::scale(h, 0.2))});
    ad::Var t = ad::transpose(parts);
    ad::Var g = ad::gather_rows(ad::transpose(t), {4, 0, 2});
    ad::Var sl = ad::slice_cols(g, 2, 5);
    ad::Var rs = ad::row_sum(sl);
    return ad::add(ad::add(ad::sum(rs), ad::mean(parts)), ad::squared_norm(ad::l2_normalize(ad::slice_cols(h, 0, 1))));
  };
  auto r = check_gradients(loss, {a, w});
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(3);
  Matrix v = random_matrix(6, 2, rng);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (std::abs(v.data()[k]) < 0.1) v.data()[k] = 0.5;
  }
  auto a = ad::parameter(v);
  auto r = check_gradients([&] { return readout(ad::relu(a), 5); }, {a});
  CHECK(r.max_relative_error < 1e-7);
}

TEST_CASE("softmax family, layer norm and losses match central differences") {
  Rng rng(4);
  auto scores = param(5, 5, rng);
  BoolMatrix mask = BoolMatrix::Constant(5, 5, true);
  mask(0, 3) = mask(3, 0) = mask(2, 4) = false;
  auto gamma = param(1, 5, rng);
  auto beta = param(1, 5, rng);
  auto logits = param(5, 2, rng);
  auto weights = param(1, 3, rng);
  std::vector<Matrix> mats = {random_matrix(5, 5, rng), random_matrix(5, 5, rng), random_matrix(5, 5, rng)};
  auto z = param(5, 3, rng);
  auto base = param(5, 3, rng);
  auto rows = param(2, 3, rng);
  auto adj = ad::parameter(mmgt::testing::random_adjacency(5, rng));
  auto loss = [&] {
    ad::Var x = ad::add(ad::masked_row_softmax(scores, mask), ad::row_softmax(scores));
    x = ad::add(x, ad::layer_norm_rows(scores, gamma, beta));
    x = ad::add(x, ad::weighted_sum(weights, mats));
    ad::Var total = readout(x, 9);
    total = ad::add(total, ad::softmax_cross_entropy(logits, {0, 1, 1, 0, 1}, {0, 2, 3}));
    total = ad::add(total, ad::pairwise_smoothness(adj, z));
    total = ad::add(total, readout(ad::distribute_rows(base, rows, {3, 1}), 10));
    total = ad::add(total, readout(ad::gather_block(adj, {4, 1, 2}), 12));
    return total;
  };
  auto r = check_gradients(loss, {scores, gamma, beta, logits, weights, z, base, rows, adj});
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("masked softmax zeroes masked entries and rejects empty rows") {
  Matrix s(2, 3);
  s << 1, 2, 3, 4, 5, 6;
  BoolMatrix mask(2, 3);
  mask << true, false, true, false, false, false;
  CHECK_THROWS(ad::masked_row_softmax(ad::constant(s), mask));
  mask(1, 1) = true;
  Matrix out = ad::masked_row_softmax(ad::constant(s), mask).value();
  CHECK(out(0, 1) == 0.0);
  CHECK(out(1, 1) == doctest::Approx(1.0));
  CHECK(out.row(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("pairwise smoothness equals the double loop") {
  Rng rng(5);
  Matrix a = mmgt::testing::random_adjacency(6, rng);
  Matrix z = random_matrix(6, 4, rng);
  double brute = 0.0;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) brute += a(i, j) * (z.row(i) - z.row(j)).squaredNorm();
  }
  brute /= 2.0 * 36.0;
  CHECK(ad::pairwise_smoothness(ad::constant(a), ad::constant(z)).scalar() == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("no-grad guard stops recording") {
  auto p = ad::parameter(Matrix::Ones(2, 2));
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    auto y = ad::scale(p, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(ad::grad_enabled());
  CHECK(ad::scale(p, 2.0).requires_grad());
}

TEST_CASE("AdamW step matches a hand-computed update") {
  auto p = ad::parameter(Matrix::Constant(1, 2, 1.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  AdamOptimizer opt({p}, cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, 1.0};
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    // loss = 3 w0 + w1^2
    ad::Var loss = ad::add(ad::scale(ad::slice_cols(p, 0, 1), 3.0), ad::squared_norm(ad::slice_cols(p, 1, 1)));
    ad::backward(loss);
    const double g[2] = {3.0, 2.0 * w[1]};
    opt.step();
    for (int k = 0; k < 2; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1.0 - std::pow(0.9, t));
      const double vh = v[k] / (1.0 - std::pow(0.999, t));
      w[k] -= 0.1 * 0.01 * w[k];
      w[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p.value()(0, 0) == doctest::Approx(w[0]).epsilon(1e-12));
    CHECK(p.value()(0, 1) == doctest::Approx(w[1]).epsilon(1e-12));
  }
  CHECK(opt.steps_taken() == 3);
}

TEST_CASE("snapshot and restore round-trip parameter values") {
  Rng rng(6);
  std::vector<ad::Var> ps = {param(2, 3, rng), param(1, 1, rng)};
  auto snap = snapshot(ps);
  ps[0].mutable_value().setZero();
  ps[1].mutable_value().setOnes();
  restore(ps, snap);
  CHECK(ps[0].value() == snap[0]);
  CHECK(ps[1].value() == snap[1]);
}

TEST_CASE("glorot initialisation stays inside its bound") {
  Rng rng(7);
  auto w = glorot_parameter(30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  CHECK(w.value().cwiseAbs().maxCoeff() <= bound);
  CHECK(w.requires_grad());
}
