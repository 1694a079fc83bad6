// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number; no arguments runs all of them.

#include "pipeline_support.hpp"

#include "mmgt/cli.hpp"
#include "mmgt/fusion.hpp"
#include "mmgt/gt_encoder.hpp"
#include "mmgt/objective.hpp"
#include "mmgt/population_graph.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace mmgt;
using namespace mmgt::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects the first failed condition of a criterion.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
  }
  bool ok() const { return failure_.empty(); }
  Outcome finish(const std::string& detail) const {
    return {ok(), ok() ? detail : failure_ + "; " + detail};
  }

 private:
  std::string failure_;
};

double cpu_seconds(std::clock_t start) { return static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC; }

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Matrix sparse_graph(Eigen::Index n, Rng& rng) {
  Matrix a = random_adjacency(n, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (unit(rng) < 0.4) a(i, j) = a(j, i) = 0.0;
    }
  }
  return a;
}

GtLayerParams busy_layer(Eigen::Index in, Eigen::Index hidden, int heads, Rng& rng) {
  GtLayerParams p = make_gt_layer(in, hidden, heads, rng);
  for (auto* v : {&p.b_q, &p.b_k, &p.b_v, &p.b_e, &p.b_r, &p.ln_beta}) {
    v->mutable_value() = random_matrix(v->rows(), v->cols(), rng, 0.3);
  }
  p.w_g.mutable_value() = random_matrix(p.w_g.rows(), 1, rng, 0.3);
  return p;
}

bool same_parameters(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != b[k].size() ||
        std::memcmp(a[k].data(), b[k].data(), sizeof(double) * static_cast<std::size_t>(a[k].size())) != 0) {
      return false;
    }
  }
  return true;
}

// 1. AMRS affinity against a per-pair re-evaluation from the raw records.
Outcome amrs_oracle() {
  const std::clock_t start = std::clock();
  Verdict v;
  Rng rng(2024);
  double worst = 0.0;
  bool mixed = false;
  for (int trial = 0; trial < 50; ++trial) {
    const AmrsInstance inst = random_amrs_instance(rng, 20, 3);
    std::set<AttributeKind> kinds;
    for (const auto& a : inst.cohort.schema.attributes) kinds.insert(a.kind);
    mixed = mixed || kinds.size() == 2;
    const Matrix c = compute_affinity_matrix(build_reward_tables(inst.cohort, inst.roles), inst.alpha, inst.betas);
    worst = std::max(worst, (c - brute_force_affinity(inst)).cwiseAbs().maxCoeff());
    v.require(c == c.transpose(), "affinity not symmetric");
  }
  const double seconds = cpu_seconds(start);
  v.require(mixed, "no instance mixed categorical and continuous attributes");
  v.require(worst <= 1e-12, "max deviation above 1e-12");
  v.require(seconds < 10.0, "runtime over 10 s");
  return v.finish("50 instances, max |C - oracle| " + num(worst, 3) + ", " + num(seconds, 3) + " s");
}

// 2. The informative attribute ends with the largest weight.
Outcome alpha_recovery() {
  const std::clock_t start = std::clock();
  Verdict v;
  int final_wins = 0, restored_wins = 0;
  std::ostringstream weights;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig c;
    apply_preset(c, "adhd200");
    c.seed = seed;
    c.learning_rate = 3e-4;
    c.max_epochs = 100;
    c.patience = 100;
    c.vae_epochs = 100;
    c.synth_informativeness = "0.8,0,0";
    c.validate();
    const Cohort cohort = generate_synthetic_cohort(synthetic_spec(c), seed);
    const FoldPlan plan = make_fold_plan(cohort.labels(), c.n_folds, seed);
    const PreparedFold prepared = prepare_fold(cohort, plan.folds[0], lift_all(cohort, c), c);
    const FoldResult r = train_fold(prepared, c, 0, seed, cohort.labels());
    const auto& a = r.trace.back().alpha;
    const bool strict = a[0] > a[1] && a[0] > a[2];
    final_wins += strict ? 1 : 0;
    restored_wins += r.alpha[0] > r.alpha[1] && r.alpha[0] > r.alpha[2] ? 1 : 0;
    weights << (seed ? " " : "") << num(a[0], 4);
  }
  const double seconds = cpu_seconds(start);
  v.require(final_wins >= 9, "informative alpha is the strict maximum in only " + std::to_string(final_wins) + "/10");
  v.require(seconds < 180.0, "runtime over 3 CPU-minutes");
  return v.finish("strict maximum in " + std::to_string(final_wins) + "/10 seeds (" + std::to_string(restored_wins) +
                  "/10 at the restored epoch), alpha_site " + weights.str() + ", " + num(seconds, 3) + " s");
}

// 3. End-to-end central differences through every component and loss term.
Outcome gradient_integrity() {
  const std::clock_t start = std::clock();
  Verdict v;
  double worst = 0.0;
  std::size_t entries = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GradientCheck r = full_model_gradient_check(seed, 12);
    worst = std::max(worst, r.max_relative_error);
    entries += r.entries;
  }
  const double seconds = cpu_seconds(start);
  v.require(worst <= 1e-4, "max relative error above 1e-4");
  v.require(seconds < 120.0, "runtime over 2 CPU-minutes");
  return v.finish(std::to_string(entries) + " coordinates on N=12 graphs, max relative error " + num(worst, 3) + ", " +
                  num(seconds, 3) + " s");
}

// 4. Structural invariants of the encoder, pooling, graph and fusion pieces.
Outcome structural_invariants() {
  Verdict v;
  Rng rng(4);
  double row_error = 0.0, equivariance = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 5 + trial % 8;
    const GtLayerParams p = busy_layer(6, 16, 4, rng);
    const Matrix a = sparse_graph(n, rng);
    const Matrix h = random_matrix(n, 6, rng);
    AttentionCapture cap;
    const Matrix out = gt_layer_forward(ad::constant(h), ad::constant(a), p, &cap).value();
    for (const auto& head : cap.heads) {
      row_error = std::max(row_error, (head.rowwise().sum().array() - 1.0).abs().maxCoeff());
      v.require(((a.array() == 0.0).cast<double>() * head.array()).abs().maxCoeff() == 0.0,
                "attention outside the neighbourhood");
    }
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + n, rng);
    const Matrix out_p = gt_layer_forward(ad::constant(perm * h), ad::constant(perm * a * perm.transpose()), p).value();
    equivariance = std::max(equivariance, (out_p - perm * out).cwiseAbs().maxCoeff());
  }
  v.require(row_error <= 1e-6, "attention rows not normalised");
  v.require(equivariance <= 1e-12, "GT layer not permutation-equivariant");

  for (std::size_t n = 1; n <= 300; ++n) {
    v.require(pooled_count(n, 0.8) == static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n) - 1e-9)),
              "pooled count differs from ceil(0.8 N)");
  }
  Vector ties = Vector::Constant(6, 0.25);
  ties(4) = 0.9;
  v.require(top_k_indices(ties, 4) == std::vector<int>{4, 0, 1, 2}, "ties not broken toward the lower index");
  for (Eigen::Index n = 3; n <= 15; ++n) {
    const Matrix h = random_matrix(n, 4, rng);
    const ad::Var score = ad::constant(random_matrix(4, 1, rng));
    const PoolResult r1 = gpool(ad::constant(h), ad::constant(random_adjacency(n, rng)), 0.8, score);
    const PoolResult r2 = gpool(ad::constant(h), ad::constant(random_adjacency(n, rng)), 0.8, score);
    v.require(r1.record.idx.size() == pooled_count(static_cast<std::size_t>(n), 0.8), "gPool kept the wrong count");
    v.require(r1.record.idx == r2.record.idx, "gPool selection not deterministic");
    const Matrix small = random_matrix(static_cast<Eigen::Index>(r1.record.idx.size()), 4, rng);
    const Matrix back = gunpool(ad::constant(small), r1.record).value();
    std::vector<int> position(static_cast<std::size_t>(n), -1);
    for (std::size_t t = 0; t < r1.record.idx.size(); ++t) position[static_cast<std::size_t>(r1.record.idx[t])] = static_cast<int>(t);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int t = position[static_cast<std::size_t>(i)];
      v.require(back.row(i) == (t < 0 ? h.row(i) : small.row(t)), "gUnpool row differs from the positional oracle");
    }
  }

  const Matrix a = random_adjacency(40, rng);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Matrix d = apply_edge_dropout(a, 0.3, seed, true);
    v.require(d == d.transpose(), "edge dropout broke symmetry");
  }

  double omega_error = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix zi = random_matrix(7, 6, rng), zn = random_matrix(7, 6, rng);
    FusionParams p = FusionParams::random(6, rng);
    const JointEmbedding j = fuse_modalities(ad::constant(zi), ad::constant(zn), p);
    v.require(j.z_sh.value() == ((zi + zn) / 2.0).eval(), "shared embedding is not the average");
    const Matrix w = contribution_weights(j.tau_img, j.tau_non, j.tau_sh).value();
    omega_error = std::max(omega_error, std::abs(w.sum() - 1.0));
    v.require(w.minCoeff() > 0.0, "contribution weight not positive");
  }
  v.require(omega_error <= 1e-12, "contribution weights not normalised");
  return v.finish("attention row error " + num(row_error, 3) + ", equivariance " + num(equivariance, 3) +
                  ", omega normalisation " + num(omega_error, 3));
}

// 5. Loss identities and the double-loop regulariser oracle.
Outcome loss_identities() {
  Verdict v;
  Rng rng(5);
  const Matrix a = random_adjacency(6, rng);
  const Matrix same = Matrix::Ones(6, 1) * random_matrix(1, 4, rng);
  const double smh = graph_regularization(ad::constant(same), ad::constant(a)).smoothness.scalar();
  v.require(smh == 0.0, "smoothness not zero on identical rows");

  Matrix stochastic = random_adjacency(6, rng);
  for (Eigen::Index i = 0; i < 6; ++i) stochastic.row(i) /= stochastic.row(i).sum();
  const double deg = degree_regularization(ad::constant(stochastic)).scalar();
  v.require(std::abs(deg) <= 2.0 * kDegreeGuard, "degree term not zero on unit row sums");

  HeadParams head = HeadParams::random(3, 4, rng);
  head.w2.mutable_value().setZero();
  const double ce = classification_head(ad::constant(random_matrix(8, 3, rng)), head, {0, 1, 0, 1, 0, 1, 0, 1},
                                        {0, 1, 2, 3})
                        .ce.scalar();
  v.require(std::abs(ce - std::log(2.0)) <= 1e-15, "uniform logits do not give ln 2");

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = trial == 0 ? 3 : 2 + trial % 10;
    const Matrix adj = random_adjacency(n, rng);
    const Matrix z = random_matrix(n, 3, rng);
    const auto reg = graph_regularization(ad::constant(z), ad::constant(adj));
    double s = 0.0, logs = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        s += adj(i, j) * (z.row(i) - z.row(j)).squaredNorm();
        row += adj(i, j);
      }
      logs += std::log(row + kDegreeGuard);
    }
    const double nn = static_cast<double>(n);
    worst = std::max(worst, std::abs(reg.smoothness.scalar() - s / (2.0 * nn * nn)));
    worst = std::max(worst, std::abs(reg.degree.scalar() + logs / nn));
  }
  v.require(worst <= 1e-12, "regularisers deviate from the double loop");
  return v.finish("l_smh " + num(smh) + ", l_deg " + num(deg, 3) + ", l_ce - ln 2 " + num(ce - std::log(2.0), 3) +
                  ", double-loop deviation " + num(worst, 3));
}

/// Per-fold accuracy of a ridge classifier on the standardised RFE features.
double ridge_baseline(const PreparedFold& p, const std::vector<int>& labels) {
  const auto& train = p.fold.train;
  Matrix xtr(static_cast<Eigen::Index>(train.size()), p.x_img.cols());
  std::vector<int> ytr;
  for (std::size_t r = 0; r < train.size(); ++r) {
    xtr.row(static_cast<Eigen::Index>(r)) = p.x_img.row(train[r]);
    ytr.push_back(labels[static_cast<std::size_t>(train[r])]);
  }
  const RowVector mu = xtr.colwise().mean();
  const RowVector sd = (xtr.rowwise() - mu).cwiseAbs2().colwise().mean().cwiseSqrt();
  const Vector w = ridge_classifier_weights(xtr, ytr, 1.0);
  double ybar = 0.0;
  for (int y : ytr) ybar += y == 1 ? 1.0 : -1.0;
  ybar /= static_cast<double>(ytr.size());
  int correct = 0;
  for (int i : p.fold.test) {
    double s = ybar;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      if (sd(j) > 1e-12) s += (p.x_img(i, j) - mu(j)) / sd(j) * w(j);
    }
    correct += (s > 0.0) == (labels[static_cast<std::size_t>(i)] == 1) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(p.fold.test.size());
}

// 6. Full pipeline on the desk cohort against the feature-selection baseline.
Outcome synthetic_learning() {
  const std::clock_t start = std::clock();
  Verdict v;
  TrainConfig c;
  apply_preset(c, "abide");
  c.max_epochs = 100;
  c.patience = 100;
  c.learning_rate = 3e-4;
  c.validate();
  const Cohort cohort = generate_synthetic_cohort(synthetic_spec(c), c.seed);
  const RunReport report = run_cross_validation(cohort, c, {"synthetic"});

  const auto labels = cohort.labels();
  const FoldPlan plan = make_fold_plan(labels, c.n_folds, c.seed);
  const Matrix no_lift = Matrix::Zero(static_cast<Eigen::Index>(cohort.size()), c.embed_dim);
  std::vector<double> baseline;
  for (const auto& fold : plan.folds) baseline.push_back(ridge_baseline(prepare_fold(cohort, fold, no_lift, c), labels));
  const double base = summarize(baseline).mean;
  const double seconds = cpu_seconds(start);
  v.require(!report.failed, "a fold failed");
  v.require(report.acc.mean >= 0.85, "mean ACC below 0.85");
  v.require(report.acc.mean >= base - 0.03, "mean ACC below the baseline minus 0.03");
  v.require(seconds < 600.0, "runtime over 10 CPU-minutes");
  return v.finish("10-fold ACC " + format_mean_std(report.acc) + ", AUC " + format_mean_std(report.auc) +
                  ", RFE+ridge baseline " + num(base, 4) + ", " + num(seconds, 4) + " s");
}

// 7. Fold-plan proportions, the label-poisoning audit and summary recomputation.
Outcome protocol_fidelity() {
  Verdict v;
  Rng rng(7);
  int plans = 0;
  for (int n : {20, 37, 50, 99, 100, 200, 333, 871, 1000}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // Between 30% and 70% positives, at least one subject per class and fold.
      const double p = 0.3 + 0.4 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const int positives = std::clamp(static_cast<int>(std::lround(p * n)), 10, n - 10);
      std::vector<int> labels(static_cast<std::size_t>(n), 0);
      std::fill(labels.begin(), labels.begin() + positives, 1);
      std::shuffle(labels.begin(), labels.end(), rng);
      const std::string violation = fold_plan_violation(make_fold_plan(labels, 10, seed), labels);
      v.require(violation.empty(), "fold plan N=" + std::to_string(n) + ": " + violation);
      ++plans;
    }
  }

  int audited = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig c = tiny_config();
    c.seed = seed;
    const Cohort cohort = tiny_cohort(c, seed);
    const FoldPlan plan = make_fold_plan(cohort.labels(), c.n_folds, seed);
    const Fold& fold = plan.folds[seed];
    Cohort poisoned = cohort;
    Rng draw(seed + 50);
    for (int i : fold.test) poisoned.records[static_cast<std::size_t>(i)].label = static_cast<int>(draw() % 2);
    poisoned.records[static_cast<std::size_t>(fold.test[0])].label ^= 1;
    const FoldResult a = train_fold(prepare_fold(cohort, fold, lift_all(cohort, c), c), c, 0, seed, cohort.labels());
    const FoldResult b =
        train_fold(prepare_fold(poisoned, fold, lift_all(poisoned, c), c), c, 0, seed, poisoned.labels());
    v.require(same_parameters(a.parameters, b.parameters), "test labels changed a trained parameter");
    ++audited;
  }

  TrainConfig c = tiny_config();
  c.learning_rate = 3e-3;
  c.max_epochs = 30;
  c.patience = 30;
  const RunReport report = run_cross_validation(tiny_cohort(c, 3), c, {"fidelity"});
  std::vector<double> acc, sen, spe, auc;
  for (const auto& f : report.folds) {
    acc.push_back(f.test.acc);
    sen.push_back(f.test.sen);
    spe.push_back(f.test.spe);
    auc.push_back(f.test.auc);
  }
  v.require(report.folds.size() == static_cast<std::size_t>(c.n_folds), "fold count differs from the plan");
  const std::pair<const MetricSummary*, const std::vector<double>*> pairs[] = {
      {&report.acc, &acc}, {&report.sen, &sen}, {&report.spe, &spe}, {&report.auc, &auc}};
  for (const auto& [stored, values] : pairs) {
    const MetricSummary again = summarize(*values);
    v.require(again.mean == stored->mean && again.std == stored->std, "summary differs from recomputation");
    v.require(format_mean_std(again) == format_mean_std(*stored), "formatted summary differs");
  }
  return v.finish(std::to_string(plans) + " plans within +-1, " + std::to_string(audited) +
                  " poisoned folds bit-identical, summaries recomputed (ACC " + format_mean_std(report.acc) + ")");
}

struct CliRun {
  int code = -1;
  std::string err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(args, out, err);
  r.err = err.str();
  return r;
}

/// Reports listed in a variant directory's runs.tsv, each checked for completeness.
std::vector<RunReport> complete_reports(const fs::path& dir, int n_folds, Verdict& v) {
  std::vector<RunReport> out;
  std::ifstream index(dir / "runs.tsv");
  std::string line;
  std::getline(index, line);
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const std::string sub = line.substr(line.find('\t') + 1);
    std::ifstream in(dir / sub / "report.json");
    const RunReport r = RunReport::from_json(nlohmann::json::parse(in));
    v.require(!r.failed, sub + " failed");
    v.require(static_cast<int>(r.folds.size()) == n_folds, sub + " has the wrong fold count");
    for (const auto& f : r.folds) v.require(std::isfinite(f.test.acc) && !f.test_idx.empty(), sub + " incomplete fold");
    v.require(fs::exists(dir / sub / "manifest.json"), sub + " has no manifest");
    out.push_back(r);
  }
  return out;
}

// 8. Ablation and sweep runners through the command-line front end.
Outcome ablation_machinery() {
  Verdict v;
  const fs::path root = scratch_dir("acceptance_ablation");
  TrainConfig small = tiny_config();
  small.max_epochs = 10;
  small.patience = 10;
  std::ofstream(root / "small.conf") << render_config_file(small);

  const CliRun arch = cli_run({"ablate", "architecture", "-c", (root / "small.conf").string(), "-o",
                               (root / "arch").string()});
  v.require(arch.code == 0, "ablate architecture exited " + std::to_string(arch.code) + ": " + arch.err);
  const auto arch_reports = complete_reports(root / "arch", small.n_folds, v);
  std::set<std::string> names;
  for (const auto& r : arch_reports) names.insert(r.name);
  v.require(names == std::set<std::string>{"stacking", "residual", "cascade", "gtunet"}, "architecture variants differ");

  const CliRun sweep = cli_run({"sweep", "pool-ratio", "-c", (root / "small.conf").string(), "-o",
                                (root / "pool").string()});
  v.require(sweep.code == 0, "sweep pool-ratio exited " + std::to_string(sweep.code) + ": " + sweep.err);
  const auto pool_reports = complete_reports(root / "pool", small.n_folds, v);

  TrainConfig chance = small;
  chance.synth_subjects = 200;
  chance.synth_roi = 20;
  chance.n_folds = 10;
  chance.embed_dim = 32;
  chance.hidden_dim = 16;
  chance.head_hidden = 16;
  chance.vae_epochs = 100;
  chance.max_epochs = 40;
  chance.patience = 40;
  chance.synth_informativeness = "0,0,0";
  chance.validate();
  std::ofstream(root / "chance.conf") << render_config_file(chance);
  const CliRun modality = cli_run({"ablate", "modality", "-c", (root / "chance.conf").string(), "-o",
                                   (root / "modality").string()});
  v.require(modality.code == 0, "ablate modality exited " + std::to_string(modality.code) + ": " + modality.err);
  double non_acc = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : complete_reports(root / "modality", chance.n_folds, v)) {
    if (r.name == "nonimaging") non_acc = r.acc.mean;
  }
  v.require(std::abs(non_acc - 0.5) <= 0.1, "non-imaging-only ACC not within 0.1 of chance");
  fs::remove_all(root);
  return v.finish(std::to_string(arch_reports.size()) + " architecture reports, " +
                  std::to_string(pool_reports.size()) + " pool-ratio reports, non-imaging-only ACC " +
                  num(non_acc, 4) + " on uninformative attributes");
}

struct Criterion {
  int number;
  std::string title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "AMRS oracle equivalence", amrs_oracle},
      {2, "alpha recovery", alpha_recovery},
      {3, "gradient integrity", gradient_integrity},
      {4, "structural invariants", structural_invariants},
      {5, "loss identities", loss_identities},
      {6, "end-to-end synthetic learning", synthetic_learning},
      {7, "protocol fidelity", protocol_fidelity},
      {8, "ablation machinery", ablation_machinery},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.number << ": " << c.title << " (" << o.detail
              << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
