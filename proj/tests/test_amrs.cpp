#include "doctest.h"
#include "support.hpp"

#include "mmgt/amrs.hpp"
#include "mmgt/errors.hpp"
#include "mmgt/optim.hpp"

using namespace mmgt;
using mmgt::testing::brute_force_affinity;
using mmgt::testing::check_gradients;
using mmgt::testing::random_amrs_instance;

namespace {

Cohort site_cohort(const std::vector<int>& sites, const std::vector<int>& labels) {
  Cohort c;
  c.n_roi = 2;
  AttributeSchema site;
  site.name = "site";
  site.vocabulary = {"A", "B", "C"};
  c.schema.attributes.push_back(site);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    c.records.push_back({"s" + std::to_string(i), Vector::Zero(1), {static_cast<double>(sites[i])}, labels[i]});
  }
  return c;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("reward, penalty and motivation cases") {
  // 0,1: same site same label; 0,2: same site different label; 3: other site;
  // 4,5: test subjects on one site.
  Cohort c = site_cohort({0, 0, 0, 1, 2, 2}, {0, 0, 1, 0, 1, 0});
  std::vector<SplitRole> roles = {SplitRole::train, SplitRole::train, SplitRole::val,
                                  SplitRole::train, SplitRole::test,  SplitRole::test};
  auto t = build_reward_tables(c, roles);
  CHECK(t.reward[0](0, 1) == 1);
  CHECK(t.penalty[0](0, 1) == 0);
  CHECK(t.motivation[0](0, 1) == 0);
  CHECK(t.penalty[0](0, 2) == 1);
  CHECK(t.reward[0](0, 2) == 0);
  for (int j = 0; j < 6; ++j) {
    if (j == 3) continue;
    CHECK(t.reward[0](3, j) + t.penalty[0](3, j) + t.motivation[0](3, j) == 0);
  }
  CHECK(t.motivation[0](4, 5) == 1);
  CHECK(t.reward[0](4, 5) + t.penalty[0](4, 5) == 0);
}

TEST_CASE("continuous attributes match within the schema tolerance") {
  Cohort c;
  c.n_roi = 2;
  c.schema.attributes.push_back({"age", AttributeKind::continuous, {}, 2.0});
  const double ages[] = {10.0, 12.0, 12.5, 20.0};
  for (int i = 0; i < 4; ++i) c.records.push_back({"s" + std::to_string(i), Vector::Zero(1), {ages[i]}, 0});
  auto t = build_reward_tables(c, std::vector<SplitRole>(4, SplitRole::train));
  CHECK(t.reward[0](0, 1) == 1);
  CHECK(t.reward[0](0, 2) == 0);
  CHECK(t.reward[0](1, 2) == 1);
  CHECK(t.reward[0](2, 3) == 0);
  c.schema.attributes[0].match_tolerance.reset();
  CHECK_THROWS_AS(build_reward_tables(c, std::vector<SplitRole>(4, SplitRole::train)), ValidationError);
}

TEST_CASE("reward tables satisfy their structural invariants") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_amrs_instance(rng);
    auto t = build_reward_tables(inst.cohort, inst.roles);
    const auto r = t.reward_total(), p = t.penalty_total(), m = t.motivation_total();
    IntMatrix sum_r = IntMatrix::Zero(r.rows(), r.cols());
    for (std::size_t u = 0; u < t.attributes(); ++u) {
      for (const IntMatrix* table : {&t.reward[u], &t.penalty[u], &t.motivation[u]}) {
        CHECK(*table == table->transpose());
        CHECK(table->diagonal().isZero());
        CHECK(table->minCoeff() >= 0);
        CHECK(table->maxCoeff() <= 1);
      }
      CHECK(t.reward[u].cwiseProduct(t.penalty[u]).isZero());
      sum_r += t.reward[u];
    }
    CHECK(sum_r == r);
    CHECK(p.minCoeff() >= 0);
    CHECK(m.minCoeff() >= 0);
  }
}

TEST_CASE("test labels are never read") {
  Rng rng(2);
  auto inst = random_amrs_instance(rng);
  auto base = build_reward_tables(inst.cohort, inst.roles);
  for (std::size_t i = 0; i < inst.roles.size(); ++i) {
    if (inst.roles[i] == SplitRole::test) inst.cohort.records[i].label ^= 1;
  }
  auto flipped = build_reward_tables(inst.cohort, inst.roles);
  for (std::size_t u = 0; u < base.attributes(); ++u) {
    CHECK(base.reward[u] == flipped.reward[u]);
    CHECK(base.penalty[u] == flipped.penalty[u]);
    CHECK(base.motivation[u] == flipped.motivation[u]);
  }
}

TEST_CASE("affinity matrix examples") {
  RewardTables zero;
  zero.reward = {IntMatrix::Zero(3, 3)};
  zero.penalty = zero.reward;
  zero.motivation = zero.reward;
  Vector alpha = Vector::Ones(1);
  std::vector<BetaCoefficients> betas(1);
  CHECK((compute_affinity_matrix(zero, alpha, betas).array() == 0.5).all());

  RewardTables one = zero;
  one.reward[0](0, 1) = one.reward[0](1, 0) = 1;
  Matrix c = compute_affinity_matrix(one, alpha, betas);
  CHECK(c(0, 1) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(c(0, 1) == sigmoid(1.0));
  CHECK(c(1, 1) == 0.5);
}

TEST_CASE("affinity equals the per-pair oracle and is symmetric") {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_amrs_instance(rng);
    Matrix c = compute_affinity_matrix(build_reward_tables(inst.cohort, inst.roles), inst.alpha, inst.betas);
    worst = std::max(worst, (c - brute_force_affinity(inst)).cwiseAbs().maxCoeff());
    CHECK(c == c.transpose());
    CHECK(c.minCoeff() > 0.0);
    CHECK(c.maxCoeff() < 1.0);
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("Q value examples") {
  RewardTables t;
  t.reward = {IntMatrix::Zero(2, 2)};
  t.reward[0](0, 1) = t.reward[0](1, 0) = 1;
  t.penalty = {IntMatrix::Zero(2, 2)};
  t.motivation = {IntMatrix::Ones(2, 2)};
  std::vector<BetaCoefficients> betas(1);
  CHECK(compute_q_value(t, Vector::Ones(1), betas) == 0.5);

  t.reward[0].setZero();
  t.penalty[0](0, 1) = t.penalty[0](1, 0) = 1;
  CHECK(compute_q_value(t, Vector::Ones(1), betas) == 0.0);
}

TEST_CASE("shifting weight toward the larger value sum does not lower Q") {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = random_amrs_instance(rng, 6, 2);
    if (inst.cohort.schema.size() != 2) continue;
    auto t = build_reward_tables(inst.cohort, inst.roles);
    Vector sums = value_sums(t, inst.betas);
    const Eigen::Index big = sums(0) >= sums(1) ? 0 : 1;
    for (int g = 1; g < 20; ++g) {
      Vector alpha(2);
      alpha << g / 20.0, 1.0 - g / 20.0;
      Vector doubled = alpha;
      doubled(big) *= 2.0;
      doubled /= doubled.sum();
      CHECK(compute_q_value(t, doubled, inst.betas) >= compute_q_value(t, alpha, inst.betas));
    }
  }
}

TEST_CASE("reward loss is the guarded reciprocal") {
  CHECK(reward_loss(0.5, 0.0) == 2.0);
  CHECK(reward_loss(0.0) == doctest::Approx(1e8));
  CHECK(std::isfinite(reward_loss(0.0)));
  CHECK(reward_loss(0.8, 0.0) == doctest::Approx(reward_loss(0.4, 0.0) / 2.0).epsilon(1e-15));
}

TEST_CASE("reward loss gradient with respect to alpha logits") {
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_amrs_instance(rng);
    auto t = build_reward_tables(inst.cohort, inst.roles);
    Vector sums = value_sums(t, inst.betas);
    AlphaWeights alpha(t.attributes());
    alpha.logits().mutable_value() = mmgt::testing::random_matrix(1, static_cast<Eigen::Index>(t.attributes()), rng);
    auto loss = [&] {
      ad::Var q = amrs_ops::q_value(alpha.weights_var(), sums, t.subjects());
      ad::Var lr = amrs_ops::reward_loss(q);
      ad::Var c = amrs_ops::affinity(alpha.weights_var(), attribute_terms(t, inst.betas));
      return ad::add(lr, ad::mean(c));
    };
    auto r = check_gradients(loss, {alpha.logits()});
    CHECK(r.max_relative_error <= 1e-4);
    const double q = amrs_ops::q_value(alpha.weights_var(), sums, t.subjects()).scalar();
    CHECK(q == doctest::Approx(compute_q_value(t, alpha.weights(), inst.betas)).epsilon(1e-14));
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("a more informative attribute earns a larger value sum") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto low = default_synthetic_spec(0.2);
    auto high = default_synthetic_spec(0.8);
    Cohort a = generate_synthetic_cohort(low, seed);
    Cohort b = generate_synthetic_cohort(high, seed);
    auto plan = make_fold_plan(a.labels(), 10, seed);
    auto roles = split_roles(a.size(), plan.folds[0]);
    std::vector<BetaCoefficients> betas(3);
    const double s_low = value_sums(build_reward_tables(a, roles), betas)(0);
    const double s_high = value_sums(build_reward_tables(b, roles), betas)(0);
    CHECK(s_high > s_low);
  }
}

TEST_CASE("alpha stays on the simplex under optimisation") {
  AlphaWeights alpha(3);
  CHECK(alpha.weights().isApproxToConstant(1.0 / 3.0));
  AdamOptimizer opt({alpha.logits()}, {0.5, 0.0});
  Matrix target(1, 3);
  target << 5.0, -3.0, 0.1;
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    ad::backward(ad::sum(ad::hadamard(alpha.weights_var(), ad::constant(target))));
    opt.step();
    Vector w = alpha.weights();
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.minCoeff() > 0.0);
    CHECK(w.maxCoeff() < 1.0);
  }
}

TEST_CASE("beta coefficients must satisfy the sign and magnitude constraints") {
  CHECK_NOTHROW(validate_betas({BetaCoefficients{}}));
  CHECK_THROWS_AS(validate_betas({BetaCoefficients{1.0, -1.2, 0.5}}), ValidationError);
  CHECK_THROWS_AS(validate_betas({BetaCoefficients{-1.0, -3.0, 0.5}}), ValidationError);
  CHECK_THROWS_AS(validate_betas({BetaCoefficients{1.0, 2.0, 0.5}}), ValidationError);
}
