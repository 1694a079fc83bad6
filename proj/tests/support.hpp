#pragma once

// Shared helpers for the unit tests: random data and a central-difference
// gradient checker.

#include "mmgt/autodiff.hpp"
#include "mmgt/amrs.hpp"
#include "mmgt/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mmgt::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g(rng);
  }
  return m;
}

/// Random symmetric matrix with entries in (lo, hi) and unit diagonal.
inline Matrix random_adjacency(Eigen::Index n, Rng& rng, double lo = 0.05, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix a = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) a(i, j) = a(j, i) = u(rng);
  }
  return a;
}

/// Below a magnitude of 1e-5 the comparison becomes absolute, which keeps
/// central-difference rounding on exactly-zero gradients from counting as error.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

/// Compares backward() against central differences for every entry of every
/// parameter. `loss` must rebuild the graph from the current parameter values.
inline GradientCheck check_gradients(const std::function<ad::Var()>& loss, std::vector<ad::Var> params,
                                     double step = 1e-5) {
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  std::vector<Matrix> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());
  GradientCheck out;
  ad::NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k].mutable_value();
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      for (Eigen::Index r = 0; r < value.rows(); ++r) {
        const double saved = value(r, c);
        value(r, c) = saved + step;
        const double up = loss().scalar();
        value(r, c) = saved - step;
        const double down = loss().scalar();
        value(r, c) = saved;
        const double numeric = (up - down) / (2.0 * step);
        out.max_relative_error = std::max(out.max_relative_error, relative_error(analytic[k](r, c), numeric));
        ++out.entries;
      }
    }
  }
  return out;
}

/// First violated fold-plan invariant, or an empty string: each fold
/// partitions 0..N-1, split sizes are within one of (F-2):1:1, per-class split
/// counts are within one of their stratified share, and every subject is
/// tested exactly once.
inline std::string fold_plan_violation(const FoldPlan& plan, const std::vector<int>& labels) {
  const auto n = labels.size();
  const double share = 1.0 / plan.n_folds;
  std::array<double, 2> class_size{0.0, 0.0};
  for (int y : labels) class_size[static_cast<std::size_t>(y)] += 1.0;
  if (static_cast<int>(plan.folds.size()) != plan.n_folds) return "fold count";
  std::vector<int> tested(n, 0);
  for (std::size_t k = 0; k < plan.folds.size(); ++k) {
    const auto& f = plan.folds[k];
    const std::string tag = "fold " + std::to_string(k) + ": ";
    std::vector<int> seen(n, 0);
    for (const auto* part : {&f.train, &f.val, &f.test}) {
      for (int i : *part) {
        if (i < 0 || static_cast<std::size_t>(i) >= n) return tag + "index out of range";
        ++seen[static_cast<std::size_t>(i)];
      }
    }
    for (int c : seen) {
      if (c != 1) return tag + "splits do not partition the subjects";
    }
    for (int i : f.test) ++tested[static_cast<std::size_t>(i)];
    const std::array<std::pair<const std::vector<int>*, double>, 3> parts = {
        std::pair{&f.train, 1.0 - 2.0 * share}, std::pair{&f.val, share}, std::pair{&f.test, share}};
    for (const auto& [part, s] : parts) {
      if (std::abs(static_cast<double>(part->size()) - s * static_cast<double>(n)) > 1.0 + 1e-9) {
        return tag + "split size off its proportion";
      }
      std::array<double, 2> count{0.0, 0.0};
      for (int i : *part) count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
      for (std::size_t c = 0; c < 2; ++c) {
        if (std::abs(count[c] - s * class_size[c]) > 1.0 + 1e-9) return tag + "class count off its share";
      }
    }
  }
  for (int c : tested) {
    if (c != 1) return "a subject is not tested exactly once";
  }
  return {};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmgt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small cohort with random categorical and continuous attributes, random
/// labels and random split roles, for AMRS oracle comparisons.
struct AmrsInstance {
  Cohort cohort;
  std::vector<SplitRole> roles;
  Vector alpha;
  std::vector<BetaCoefficients> betas;
};

inline AmrsInstance random_amrs_instance(Rng& rng, int max_subjects = 20, int max_attributes = 3) {
  std::uniform_int_distribution<int> n_pick(4, max_subjects);
  std::uniform_int_distribution<int> v_pick(1, max_attributes);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AmrsInstance inst;
  const int n = n_pick(rng);
  const int v = v_pick(rng);
  inst.cohort.n_roi = 2;
  std::vector<int> n_categories;
  for (int u = 0; u < v; ++u) {
    AttributeSchema attr;
    attr.name = "a" + std::to_string(u);
    if (unit(rng) < 0.5) {
      attr.kind = AttributeKind::categorical;
      const int k = 2 + static_cast<int>(rng() % 3);
      for (int c = 0; c < k; ++c) attr.vocabulary.push_back("v" + std::to_string(c));
      n_categories.push_back(k);
    } else {
      attr.kind = AttributeKind::continuous;
      attr.match_tolerance = 0.5 + 2.0 * unit(rng);
      n_categories.push_back(0);
    }
    inst.cohort.schema.attributes.push_back(attr);
  }
  for (int i = 0; i < n; ++i) {
    SubjectRecord r;
    r.subject_id = "s" + std::to_string(i);
    r.imaging_raw = Vector::Zero(1);
    r.label = i < 2 ? i : static_cast<int>(rng() % 2);
    for (int u = 0; u < v; ++u) {
      const int k = n_categories[static_cast<std::size_t>(u)];
      // Continuous values on a coarse grid so exact-tolerance ties occur.
      r.phenotypes.push_back(k > 0 ? static_cast<double>(rng() % static_cast<unsigned>(k))
                                   : 0.5 * static_cast<double>(rng() % 12));
    }
    inst.cohort.records.push_back(r);
    const double role = unit(rng);
    inst.roles.push_back(role < 0.6 ? SplitRole::train : role < 0.8 ? SplitRole::val : SplitRole::test);
  }
  inst.alpha = Vector(v);
  for (int u = 0; u < v; ++u) inst.alpha(u) = unit(rng) + 0.05;
  inst.alpha /= inst.alpha.sum();
  for (int u = 0; u < v; ++u) {
    BetaCoefficients b;
    b.reward = 0.2 + unit(rng);
    b.motivation = 0.1 + 0.5 * unit(rng);
    b.penalty = -(b.reward + b.motivation + 0.1 + unit(rng));
    inst.betas.push_back(b);
  }
  return inst;
}

/// Affinity re-evaluated pair by pair from the raw records: reward when both
/// subjects are outside the test split with equal labels, penalty when they
/// are outside it with different labels, motivation when both are in it.
inline Matrix brute_force_affinity(const AmrsInstance& inst) {
  const auto& recs = inst.cohort.records;
  const auto n = static_cast<Eigen::Index>(recs.size());
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double logit = 0.0;
      for (std::size_t u = 0; u < inst.cohort.schema.size() && i != j; ++u) {
        const auto& attr = inst.cohort.schema.attributes[u];
        const double a = recs[static_cast<std::size_t>(i)].phenotypes[u];
        const double b = recs[static_cast<std::size_t>(j)].phenotypes[u];
        const bool match = attr.kind == AttributeKind::categorical ? a == b : std::abs(a - b) <= *attr.match_tolerance;
        if (!match) continue;
        const bool ti = inst.roles[static_cast<std::size_t>(i)] == SplitRole::test;
        const bool tj = inst.roles[static_cast<std::size_t>(j)] == SplitRole::test;
        const auto& beta = inst.betas[u];
        double term = 0.0;
        if (ti && tj) {
          term = beta.motivation;
        } else if (!ti && !tj) {
          const bool same = recs[static_cast<std::size_t>(i)].label == recs[static_cast<std::size_t>(j)].label;
          term = same ? beta.reward : beta.penalty;
        }
        logit += inst.alpha(static_cast<Eigen::Index>(u)) * term;
      }
      c(i, j) = 1.0 / (1.0 + std::exp(-logit));
    }
  }
  return c;
}

}  // namespace mmgt::testing
