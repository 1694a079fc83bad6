#include "mmgt/trainer.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/matrix_io.hpp"
#include "mmgt/optim.hpp"
#include "mmgt/population_graph.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace mmgt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double accuracy(const Matrix& logits, const std::vector<int>& labels, const std::vector<int>& idx) {
  if (idx.empty()) return kNaN;
  int correct = 0;
  for (int i : idx) {
    const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
    correct += pred == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

std::vector<double> positive_scores(const Matrix& logits) {
  if (logits.cols() != 2) throw ValidationError("expected two-column logits");
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(logits(i, 0) - logits(i, 1)));
  }
  return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mean_rank;
    i = j + 1;
  }
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    } else {
      neg += 1.0;
    }
  }
  if (pos == 0.0 || neg == 0.0) return kNaN;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

Metrics evaluate_metrics(const Matrix& logits, const std::vector<int>& labels,
                         const std::vector<int>& idx) {
  if (idx.empty()) throw ValidationError("evaluate_metrics: empty index set");
  const auto all_scores = positive_scores(logits);
  int tp = 0, tn = 0, fp = 0, fn = 0;
  std::vector<double> scores;
  std::vector<int> truth;
  for (int i : idx) {
    const int y = labels.at(static_cast<std::size_t>(i));
    const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
    if (pred == 1 && y == 1) ++tp;
    if (pred == 0 && y == 0) ++tn;
    if (pred == 1 && y == 0) ++fp;
    if (pred == 0 && y == 1) ++fn;
    scores.push_back(all_scores[static_cast<std::size_t>(i)]);
    truth.push_back(y);
  }
  Metrics m;
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(idx.size());
  if (tp + fn > 0) {
    m.sen = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    m.sen = kNaN;
    m.warnings.push_back("no positive subjects: sensitivity undefined");
  }
  if (tn + fp > 0) {
    m.spe = static_cast<double>(tn) / static_cast<double>(tn + fp);
  } else {
    m.spe = kNaN;
    m.warnings.push_back("no negative subjects: specificity undefined");
  }
  m.auc = roc_auc(scores, truth);
  if (std::isnan(m.auc)) m.warnings.push_back("single-class set: AUC undefined");
  return m;
}

Matrix standardize_columns(const Matrix& x, const std::vector<int>& rows) {
  if (rows.empty()) throw ValidationError("standardize_columns: no reference rows");
  RowVector mean = RowVector::Zero(x.cols());
  for (int r : rows) mean += x.row(r);
  mean /= static_cast<double>(rows.size());
  RowVector var = RowVector::Zero(x.cols());
  for (int r : rows) var += (x.row(r) - mean).array().square().matrix();
  var /= static_cast<double>(rows.size());
  Matrix out = x.rowwise() - mean;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double sd = std::sqrt(var(c));
    if (sd > 1e-12) out.col(c) /= sd;
  }
  return out;
}

ReconstructorConfig reconstructor_config(const TrainConfig& config, const std::string& cohort_id) {
  ReconstructorConfig rc;
  rc.variant = config.reconstructor;
  rc.latent_dim = config.embed_dim;
  rc.learning_rate = config.vae_learning_rate;
  rc.weight_decay = config.vae_weight_decay;
  rc.epochs = config.vae_epochs;
  rc.seed = config.seed;
  rc.cohort_id = cohort_id;
  return rc;
}

Matrix lift_nonimaging(const Cohort& cohort, const TrainConfig& config, const Reconstructor* pretrained,
                       const std::vector<int>& fit_rows, std::vector<ReconstructionTracePoint>* trace) {
  const Matrix pheno = cohort.phenotype_matrix();
  if (pretrained) {
    if (pretrained->config().variant != config.reconstructor) {
      throw ValidationError(std::string("pretrained reconstructor is '") +
                            to_string(pretrained->config().variant) + "' but the run asks for '" +
                            to_string(config.reconstructor) + "'");
    }
    if (pretrained->latent_dim() != config.embed_dim) {
      throw ValidationError("pretrained reconstructor has latent width " +
                            std::to_string(pretrained->latent_dim()) + ", embed_dim is " +
                            std::to_string(config.embed_dim));
    }
    if (trace) *trace = pretrained->trace();
    return pretrained->encode(pheno);
  }
  Matrix fit(static_cast<Eigen::Index>(fit_rows.size()), pheno.cols());
  for (std::size_t r = 0; r < fit_rows.size(); ++r) fit.row(static_cast<Eigen::Index>(r)) = pheno.row(fit_rows[r]);
  const Reconstructor model = Reconstructor::pretrain(fit, reconstructor_config(config, "cohort"));
  if (trace) *trace = model.trace();
  return model.encode(pheno);
}

PreparedFold prepare_fold(const Cohort& cohort, const Fold& fold, const Matrix& lifted_nonimaging,
                          const TrainConfig& config, const Matrix* external_affinity) {
  const auto n = static_cast<Eigen::Index>(cohort.size());
  if (fold.train.empty() || fold.val.empty() || fold.test.empty()) {
    throw ValidationError("fold needs non-empty train, validation and test sets");
  }
  if (lifted_nonimaging.rows() != n || lifted_nonimaging.cols() != config.embed_dim) {
    throw ValidationError("lifted non-imaging block must be N x embed_dim");
  }
  PreparedFold p;
  p.fold = fold;
  const auto labels = cohort.labels();
  const auto roles = split_roles(cohort.size(), fold);
  p.visible_labels.assign(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (roles[i] != SplitRole::test) p.visible_labels[i] = labels[i];
  }

  const Matrix imaging = cohort.imaging_matrix();
  if (config.embed_dim >= imaging.cols()) {
    throw ValidationError("embed_dim " + std::to_string(config.embed_dim) +
                          " must be smaller than the imaging feature count " +
                          std::to_string(imaging.cols()));
  }
  Matrix train_imaging(static_cast<Eigen::Index>(fold.train.size()), imaging.cols());
  std::vector<int> train_labels;
  for (std::size_t r = 0; r < fold.train.size(); ++r) {
    train_imaging.row(static_cast<Eigen::Index>(r)) = imaging.row(fold.train[r]);
    train_labels.push_back(labels[static_cast<std::size_t>(fold.train[r])]);
  }
  const RfeReducer rfe = fit_rfe(train_imaging, train_labels, config.embed_dim, config.rfe_step, config.seed);
  p.rfe_columns = rfe.selected_columns();
  p.x_img = standardize_columns(apply_rfe(rfe, imaging), fold.train);
  p.x_non = standardize_columns(lifted_nonimaging, fold.train);

  Matrix graph_features;
  switch (config.modality) {
    case Modality::both:
      graph_features.resize(n, p.x_img.cols() + p.x_non.cols());
      graph_features << p.x_img, p.x_non;
      break;
    case Modality::imaging: graph_features = p.x_img; break;
    case Modality::nonimaging: graph_features = p.x_non; break;
  }
  const Matrix dist = correlation_distance_matrix(graph_features);
  p.sigma = config.kernel_sigma > 0.0 ? config.kernel_sigma : default_kernel_width(dist, fold.train);
  p.similarity = (-dist.array().square() / (2.0 * p.sigma * p.sigma)).exp().matrix();
  p.similarity.diagonal().setOnes();
  p.similarity.triangularView<Eigen::StrictlyLower>() = p.similarity.transpose();

  const bool use_amrs = config.affinity_source == AffinitySource::amrs && config.modality != Modality::imaging;
  if (use_amrs) {
    if (cohort.schema.size() == 0) throw ValidationError("AMRS needs at least one phenotype attribute");
    p.tables = build_reward_tables(cohort, roles);
    const std::vector<BetaCoefficients> betas(cohort.schema.size(), config.beta);
    p.attribute_terms = attribute_terms(p.tables, betas);
    p.value_sums = value_sums(p.tables, betas);
  } else if (config.affinity_source == AffinitySource::external) {
    if (!external_affinity) throw ValidationError("affinity_source=external but no matrix supplied");
    const Matrix& c = *external_affinity;
    if (c.rows() != n || c.cols() != n) {
      throw ValidationError("external affinity must be " + std::to_string(n) + " x " + std::to_string(n));
    }
    if (!c.allFinite() || c.minCoeff() < 0.0 || c.maxCoeff() > 1.0) {
      throw ValidationError("external affinity entries must lie in [0,1]");
    }
    if (!c.isApprox(c.transpose(), 1e-12)) throw ValidationError("external affinity must be symmetric");
    p.fixed_affinity = c;
  } else {
    p.fixed_affinity = Matrix::Constant(n, n, config.constant_affinity);
  }
  return p;
}

MultiModalModel::MultiModalModel(const TrainConfig& config, Eigen::Index input_dim,
                                 std::size_t n_attributes, std::uint64_t seed)
    : config_(config), alpha_(std::max<std::size_t>(n_attributes, 1)) {
  Rng rng(seed);
  if (config.modality != Modality::nonimaging) {
    enc_img_ = std::make_unique<GtEncoder>(input_dim, config.encoder_config(config.depth_imaging), rng);
  }
  if (config.modality != Modality::imaging) {
    enc_non_ = std::make_unique<GtEncoder>(input_dim, config.encoder_config(config.depth_nonimaging), rng);
  }
  fusion_ = FusionParams::random(config.hidden_dim, rng);
  head_ = HeadParams::random(config.hidden_dim, config.head_hidden, rng);
}

std::vector<ad::Var> MultiModalModel::parameters() const {
  std::vector<ad::Var> out;
  auto append = [&out](const std::vector<ad::Var>& p) { out.insert(out.end(), p.begin(), p.end()); };
  if (enc_img_) append(enc_img_->parameters());
  if (enc_non_) append(enc_non_->parameters());
  if (config_.modality == Modality::both) append(fusion_.parameters());
  append(head_.parameters());
  if (config_.affinity_source == AffinitySource::amrs && config_.modality != Modality::imaging) {
    out.push_back(alpha_.logits());
  }
  return out;
}

ForwardOutput forward_pass(const MultiModalModel& model, const PreparedFold& prepared,
                           const PassOptions& options) {
  const TrainConfig& config = model.config();
  const Eigen::Index n = prepared.similarity.rows();
  const bool use_amrs = config.affinity_source == AffinitySource::amrs && config.modality != Modality::imaging;
  ForwardOutput out;

  ad::Var alpha;
  ad::Var affinity;
  if (use_amrs) {
    alpha = model.alpha().weights_var();
    affinity = amrs_ops::affinity(alpha, prepared.attribute_terms);
  } else {
    affinity = ad::constant(prepared.fixed_affinity);
  }
  ad::Var adjacency = graph_ops::adjacency(prepared.similarity, affinity);
  if (config.edge_threshold > 0.0) {
    Matrix keep = (adjacency.value().array() >= config.edge_threshold).cast<double>().matrix();
    keep.diagonal().setOnes();
    adjacency = ad::hadamard(adjacency, ad::constant(std::move(keep)));
  }
  if ((options.training || options.drop_edges) && config.edge_dropout > 0.0) {
    adjacency = ad::hadamard(adjacency,
                             ad::constant(edge_dropout_mask(n, config.edge_dropout, options.graph_seed)));
  }
  out.adjacency = adjacency;

  out.trace_img.capture_attention = options.capture_attention;
  out.trace_non.capture_attention = options.capture_attention;
  if (const GtEncoder* enc = model.imaging_encoder()) {
    ForwardContext ctx{options.training, options.feature_rng, &out.trace_img};
    out.z_img = enc->forward(ad::constant(prepared.x_img), adjacency, ctx);
  }
  if (const GtEncoder* enc = model.nonimaging_encoder()) {
    ForwardContext ctx{options.training, options.feature_rng, &out.trace_non};
    out.z_non = enc->forward(ad::constant(prepared.x_non), adjacency, ctx);
  }

  switch (config.modality) {
    case Modality::both: {
      const JointEmbedding joint = fuse_modalities(out.z_img, out.z_non, model.fusion());
      out.z = joint.z;
      out.omega = contribution_weights(joint.tau_img, joint.tau_non, joint.tau_sh);
      break;
    }
    case Modality::imaging:
      out.z = out.z_img;
      out.omega = ad::constant((Matrix(1, 2) << 1.0, 0.0).finished());
      break;
    case Modality::nonimaging:
      out.z = out.z_non;
      out.omega = ad::constant((Matrix(1, 2) << 0.0, 1.0).finished());
      break;
  }

  const HeadOutput head = classification_head(out.z, model.head(), prepared.visible_labels,
                                              prepared.fold.train);
  out.logits = head.logits;
  if (!options.with_loss) return out;

  ObjectiveTerms terms;
  terms.ce = head.ce;
  terms.omega = out.omega;
  terms.deg = degree_regularization(adjacency);
  if (out.z_img.valid()) terms.smh_img = ad::pairwise_smoothness(adjacency, out.z_img);
  if (out.z_non.valid()) terms.smh_non = ad::pairwise_smoothness(adjacency, out.z_non);
  if (use_amrs) {
    terms.reward = amrs_ops::reward_loss(amrs_ops::q_value(alpha, prepared.value_sums, n));
  }
  out.objective = total_objective(terms, config.objective);
  return out;
}

Matrix inference_logits(const MultiModalModel& model, const PreparedFold& prepared, std::uint64_t seed) {
  ad::NoGradGuard guard;
  PassOptions options;
  options.with_loss = false;
  const int samples = model.config().mc_samples;
  if (samples <= 0) return forward_pass(model, prepared, options).logits.value();
  options.drop_edges = true;
  Matrix mean_prob;
  for (int k = 0; k < samples; ++k) {
    options.graph_seed = mix_seed(seed ^ 0x6d63ULL, static_cast<std::uint64_t>(k));
    const Matrix logits = forward_pass(model, prepared, options).logits.value();
    Matrix prob(logits.rows(), 2);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double p1 = 1.0 / (1.0 + std::exp(logits(i, 0) - logits(i, 1)));
      prob(i, 0) = 1.0 - p1;
      prob(i, 1) = p1;
    }
    mean_prob = k == 0 ? prob : Matrix(mean_prob + prob);
  }
  mean_prob /= static_cast<double>(samples);
  return (mean_prob.array() + 1e-300).log().matrix();
}

FoldResult train_fold(const PreparedFold& prepared, const TrainConfig& config, int fold_index,
                      std::uint64_t seed, const std::vector<int>& evaluation_labels) {
  const auto start = std::chrono::steady_clock::now();
  FoldResult r;
  r.fold = fold_index;
  MultiModalModel model(config, prepared.x_img.cols(), prepared.attribute_terms.size(), seed);
  auto params = model.parameters();
  AdamOptimizer optimizer(params, AdamConfig{config.learning_rate, config.weight_decay});
  Rng feature_rng(mix_seed(seed, 0x66656174ULL));

  auto validation_acc = [&] {
    return accuracy(inference_logits(model, prepared, seed), prepared.visible_labels, prepared.fold.val);
  };
  const bool learn_alpha =
      config.affinity_source == AffinitySource::amrs && config.modality != Modality::imaging;
  auto alpha_values = [&] {
    std::vector<double> a;
    if (!learn_alpha) return a;
    const Vector w = model.alpha().weights();
    a.assign(w.data(), w.data() + w.size());
    return a;
  };

  r.best_val_acc = validation_acc();
  r.best_epoch = 0;
  std::vector<Matrix> best = snapshot(params);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    optimizer.zero_grad();
    PassOptions options;
    options.training = true;
    options.graph_seed = mix_seed(seed, static_cast<std::uint64_t>(epoch));
    options.feature_rng = &feature_rng;
    const ForwardOutput out = forward_pass(model, prepared, options);
    ad::backward(out.objective.total);
    optimizer.step();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = out.objective.breakdown;
    rec.val_acc = validation_acc();
    rec.alpha = alpha_values();
    r.trace.push_back(rec);
    r.epochs_run = epoch;
    // Ties move the best epoch forward: later states at equal accuracy have seen more training signal.
    if (rec.val_acc >= r.best_val_acc) {
      r.best_val_acc = rec.val_acc;
      r.best_epoch = epoch;
      best = snapshot(params);
    }
    if (epoch - r.best_epoch >= config.patience) break;
  }
  restore(params, best);

  {
    ad::NoGradGuard guard;
    const Matrix logits = inference_logits(model, prepared, seed);
    r.test = evaluate_metrics(logits, evaluation_labels, prepared.fold.test);
    const auto scores = positive_scores(logits);
    r.test_idx = prepared.fold.test;
    for (int i : prepared.fold.test) {
      r.test_scores.push_back(scores[static_cast<std::size_t>(i)]);
      r.test_predicted.push_back(logits(i, 1) > logits(i, 0) ? 1 : 0);
      r.test_labels.push_back(evaluation_labels.at(static_cast<std::size_t>(i)));
    }
    PassOptions options;
    options.with_loss = false;
    const ForwardOutput out = forward_pass(model, prepared, options);
    if (out.z_img.valid()) r.z_img = out.z_img.value();
    if (out.z_non.valid()) r.z_non = out.z_non.value();
    r.z = out.z.value();
    r.omega_img = out.omega.value()(0, 0);
    r.omega_non = out.omega.value()(0, 1);
  }
  r.alpha = alpha_values();
  r.parameters = snapshot(params);
  r.seconds = seconds_since(start);
  return r;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  double total = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) {
      total += v;
      ++s.count;
    }
  }
  if (s.count == 0) return {kNaN, kNaN, 0};
  s.mean = total / s.count;
  double sq = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) sq += (v - s.mean) * (v - s.mean);
  }
  s.std = std::sqrt(sq / s.count);
  return s;
}

std::string format_mean_std(const MetricSummary& s) {
  if (s.count == 0) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * s.mean << " (" << 100.0 * s.std << ")";
  return os.str();
}

void RunReport::aggregate() {
  std::vector<double> a, se, sp, au, wi, wn;
  std::vector<std::vector<double>> alphas;
  for (const auto& f : folds) {
    if (f.failed) continue;
    a.push_back(f.test.acc);
    se.push_back(f.test.sen);
    sp.push_back(f.test.spe);
    au.push_back(f.test.auc);
    wi.push_back(f.omega_img);
    wn.push_back(f.omega_non);
    if (!f.alpha.empty()) alphas.push_back(f.alpha);
  }
  acc = summarize(a);
  sen = summarize(se);
  spe = summarize(sp);
  auc = summarize(au);
  omega_img = summarize(wi).mean;
  omega_non = summarize(wn).mean;
  alpha.clear();
  if (!alphas.empty()) {
    alpha.assign(alphas.front().size(), 0.0);
    for (const auto& v : alphas) {
      for (std::size_t u = 0; u < alpha.size() && u < v.size(); ++u) alpha[u] += v[u];
    }
    for (double& v : alpha) v /= static_cast<double>(alphas.size());
  }
}

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json summary_json(const MetricSummary& s) {
  return {{"mean", number(s.mean)}, {"std", number(s.std)}, {"count", s.count},
          {"formatted", format_mean_std(s)}};
}

MetricSummary summary_from(const json& j) {
  return {number_from(j.at("mean")), number_from(j.at("std")), j.at("count").get<int>()};
}

json loss_json(const LossBreakdown& b) {
  return {{"l_ce", number(b.ce)},           {"l_smh_img", number(b.smh_img)},
          {"l_smh_non", number(b.smh_non)}, {"l_deg", number(b.deg)},
          {"l_r", number(b.reward)},        {"l_total", number(b.total)},
          {"omega_img", number(b.omega_img)}, {"omega_non", number(b.omega_non)}};
}

LossBreakdown loss_from(const json& j) {
  LossBreakdown b;
  b.ce = number_from(j.at("l_ce"));
  b.smh_img = number_from(j.at("l_smh_img"));
  b.smh_non = number_from(j.at("l_smh_non"));
  b.deg = number_from(j.at("l_deg"));
  b.reward = number_from(j.at("l_r"));
  b.total = number_from(j.at("l_total"));
  b.omega_img = number_from(j.at("omega_img"));
  b.omega_non = number_from(j.at("omega_non"));
  return b;
}

}  // namespace

nlohmann::json RunReport::to_json() const {
  json j;
  j["name"] = name;
  j["failed"] = failed;
  j["n_folds"] = n_folds;
  j["seconds"] = seconds;
  j["config"] = config;
  j["attribute_names"] = attribute_names;
  j["subject_ids"] = subject_ids;
  j["warnings"] = warnings;
  j["summary"] = {{"acc", summary_json(acc)}, {"sen", summary_json(sen)},
                  {"spe", summary_json(spe)}, {"auc", summary_json(auc)}};
  json alpha_j = json::array();
  for (double v : alpha) alpha_j.push_back(number(v));
  j["contribution"] = {{"omega_img", number(omega_img)}, {"omega_non", number(omega_non)}, {"alpha", alpha_j}};
  json rec = json::array();
  for (const auto& p : reconstructor_trace) rec.push_back({p.epoch, number(p.reconstruction), number(p.kl)});
  j["reconstructor_trace"] = rec;
  json fj = json::array();
  for (const auto& f : folds) {
    json e;
    e["fold"] = f.fold;
    e["failed"] = f.failed;
    e["error"] = f.error;
    e["acc"] = number(f.test.acc);
    e["sen"] = number(f.test.sen);
    e["spe"] = number(f.test.spe);
    e["auc"] = number(f.test.auc);
    e["warnings"] = f.test.warnings;
    e["best_val_acc"] = number(f.best_val_acc);
    e["best_epoch"] = f.best_epoch;
    e["epochs_run"] = f.epochs_run;
    e["seconds"] = f.seconds;
    e["omega_img"] = number(f.omega_img);
    e["omega_non"] = number(f.omega_non);
    e["alpha"] = f.alpha;
    e["test_idx"] = f.test_idx;
    e["test_scores"] = f.test_scores;
    e["test_predicted"] = f.test_predicted;
    e["test_labels"] = f.test_labels;
    json trace = json::array();
    for (const auto& t : f.trace) {
      json tj = loss_json(t.loss);
      tj["epoch"] = t.epoch;
      tj["val_acc"] = number(t.val_acc);
      tj["alpha"] = t.alpha;
      trace.push_back(tj);
    }
    e["trace"] = trace;
    fj.push_back(e);
  }
  j["folds"] = fj;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  r.name = j.at("name").get<std::string>();
  r.failed = j.at("failed").get<bool>();
  r.n_folds = j.at("n_folds").get<int>();
  r.seconds = j.at("seconds").get<double>();
  r.config = j.at("config").get<ConfigMap>();
  r.attribute_names = j.at("attribute_names").get<std::vector<std::string>>();
  r.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  const auto& s = j.at("summary");
  r.acc = summary_from(s.at("acc"));
  r.sen = summary_from(s.at("sen"));
  r.spe = summary_from(s.at("spe"));
  r.auc = summary_from(s.at("auc"));
  const auto& c = j.at("contribution");
  r.omega_img = number_from(c.at("omega_img"));
  r.omega_non = number_from(c.at("omega_non"));
  for (const auto& v : c.at("alpha")) r.alpha.push_back(number_from(v));
  for (const auto& p : j.at("reconstructor_trace")) {
    r.reconstructor_trace.push_back({p.at(0).get<int>(), number_from(p.at(1)), number_from(p.at(2))});
  }
  for (const auto& e : j.at("folds")) {
    FoldResult f;
    f.fold = e.at("fold").get<int>();
    f.failed = e.at("failed").get<bool>();
    f.error = e.at("error").get<std::string>();
    f.test.acc = number_from(e.at("acc"));
    f.test.sen = number_from(e.at("sen"));
    f.test.spe = number_from(e.at("spe"));
    f.test.auc = number_from(e.at("auc"));
    f.test.warnings = e.at("warnings").get<std::vector<std::string>>();
    f.best_val_acc = number_from(e.at("best_val_acc"));
    f.best_epoch = e.at("best_epoch").get<int>();
    f.epochs_run = e.at("epochs_run").get<int>();
    f.seconds = e.at("seconds").get<double>();
    f.omega_img = number_from(e.at("omega_img"));
    f.omega_non = number_from(e.at("omega_non"));
    f.alpha = e.at("alpha").get<std::vector<double>>();
    f.test_idx = e.at("test_idx").get<std::vector<int>>();
    f.test_scores = e.at("test_scores").get<std::vector<double>>();
    f.test_predicted = e.at("test_predicted").get<std::vector<int>>();
    f.test_labels = e.at("test_labels").get<std::vector<int>>();
    for (const auto& t : e.at("trace")) {
      EpochRecord rec;
      rec.epoch = t.at("epoch").get<int>();
      rec.loss = loss_from(t);
      rec.val_acc = number_from(t.at("val_acc"));
      rec.alpha = t.at("alpha").get<std::vector<double>>();
      f.trace.push_back(rec);
    }
    r.folds.push_back(std::move(f));
  }
  return r;
}

RunReport run_cross_validation(const Cohort& full_cohort, const TrainConfig& config,
                               const RunOptions& options) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  full_cohort.validate();

  Cohort cohort;
  Matrix external;
  const Matrix* external_ptr = options.external_affinity;
  if (config.sampling_ratio < 1.0) {
    const auto keep = stratified_subsample(full_cohort.labels(), config.sampling_ratio, config.seed);
    cohort = full_cohort.subset(keep);
    if (external_ptr) {
      const auto k = static_cast<Eigen::Index>(keep.size());
      external.resize(k, k);
      for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) external(a, b) = (*external_ptr)(keep[a], keep[b]);
      }
      external_ptr = &external;
    }
  } else {
    cohort = full_cohort;
  }

  RunReport report;
  report.name = options.name;
  report.config = config_to_map(config);
  report.n_folds = config.n_folds;
  for (const auto& a : cohort.schema.attributes) report.attribute_names.push_back(a.name);
  for (const auto& r : cohort.records) report.subject_ids.push_back(r.subject_id);

  const auto labels = cohort.labels();
  const FoldPlan plan = make_fold_plan(labels, config.n_folds, config.seed);

  Matrix lifted;
  if (!config.vae_train_only) {
    std::vector<int> all(cohort.size());
    std::iota(all.begin(), all.end(), 0);
    lifted = lift_nonimaging(cohort, config, options.pretrained, all, &report.reconstructor_trace);
  }

  std::vector<FoldResult> results(plan.folds.size());
  std::vector<std::exception_ptr> validation_errors(plan.folds.size());
  auto run_one = [&](std::size_t k) {
    const Fold& fold = plan.folds[k];
    try {
      Matrix fold_lifted = lifted;
      if (config.vae_train_only) fold_lifted = lift_nonimaging(cohort, config, nullptr, fold.train);
      const PreparedFold prepared = prepare_fold(cohort, fold, fold_lifted, config, external_ptr);
      results[k] = train_fold(prepared, config, static_cast<int>(k), config.seed + k, labels);
    } catch (const ValidationError&) {
      validation_errors[k] = std::current_exception();
    } catch (const std::exception& e) {
      results[k] = FoldResult{};
      results[k].fold = static_cast<int>(k);
      results[k].failed = true;
      results[k].error = e.what();
    }
  };

  if (config.parallel_folds && plan.folds.size() > 1) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const auto workers = std::min<std::size_t>(hw, plan.folds.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < plan.folds.size(); k = next++) run_one(k);
      });
    }
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t k = 0; k < plan.folds.size(); ++k) run_one(k);
  }
  for (const auto& e : validation_errors) {
    if (e) std::rethrow_exception(e);
  }

  report.folds = std::move(results);
  for (const auto& f : report.folds) {
    if (f.failed) {
      report.failed = true;
      report.warnings.push_back("fold " + std::to_string(f.fold) + " failed: " + f.error);
    }
    for (const auto& w : f.test.warnings) {
      report.warnings.push_back("fold " + std::to_string(f.fold) + ": " + w);
    }
  }
  report.aggregate();
  report.seconds = seconds_since(start);
  return report;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void write_run_artifacts(const RunReport& report, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  write_text(directory / "report.json", report.to_json().dump(2) + "\n");

  std::ostringstream contrib;
  contrib << "fold\tomega_img\tomega_non";
  for (const auto& a : report.attribute_names) contrib << "\talpha_" << a;
  contrib << "\n";
  for (const auto& f : report.folds) {
    if (f.failed) continue;
    contrib << f.fold << "\t" << fmt(f.omega_img) << "\t" << fmt(f.omega_non);
    for (std::size_t u = 0; u < report.attribute_names.size(); ++u) {
      contrib << "\t" << (u < f.alpha.size() ? fmt(f.alpha[u]) : "nan");
    }
    contrib << "\n";
  }
  write_text(directory / "contributions.tsv", contrib.str());

  if (!report.reconstructor_trace.empty()) {
    std::ostringstream rec;
    rec << "epoch\treconstruction\tkl\n";
    for (const auto& p : report.reconstructor_trace) {
      rec << p.epoch << "\t" << fmt(p.reconstruction) << "\t" << fmt(p.kl) << "\n";
    }
    write_text(directory / "reconstructor_trace.tsv", rec.str());
  }

  for (const auto& f : report.folds) {
    std::ostringstream name;
    name << "fold_" << std::setw(2) << std::setfill('0') << f.fold;
    const fs::path dir = directory / name.str();
    fs::create_directories(dir);
    std::ostringstream pred;
    pred << "subject_id\tscore\tpredicted\ttrue\n";
    for (std::size_t t = 0; t < f.test_idx.size(); ++t) {
      const int i = f.test_idx[t];
      pred << report.subject_ids.at(static_cast<std::size_t>(i)) << "\t" << fmt(f.test_scores[t]) << "\t"
           << f.test_predicted[t] << "\t" << (t < f.test_labels.size() ? std::to_string(f.test_labels[t]) : "")
           << "\n";
    }
    write_text(dir / "predictions.tsv", pred.str());

    std::ostringstream trace;
    trace << "epoch\tl_ce\tl_smh_img\tl_smh_non\tl_deg\tl_r\tl_total\tomega_img\tomega_non\tval_acc\n";
    for (const auto& e : f.trace) {
      trace << e.epoch << "\t" << fmt(e.loss.ce) << "\t" << fmt(e.loss.smh_img) << "\t"
            << fmt(e.loss.smh_non) << "\t" << fmt(e.loss.deg) << "\t" << fmt(e.loss.reward) << "\t"
            << fmt(e.loss.total) << "\t" << fmt(e.loss.omega_img) << "\t" << fmt(e.loss.omega_non)
            << "\t" << fmt(e.val_acc) << "\n";
    }
    write_text(dir / "trace.tsv", trace.str());
    if (f.z_img.size() > 0) io::write_matrix_text(dir / "embedding_imaging.txt", f.z_img);
    if (f.z_non.size() > 0) io::write_matrix_text(dir / "embedding_nonimaging.txt", f.z_non);
    if (f.z.size() > 0) io::write_matrix_text(dir / "embedding_joint.txt", f.z);
  }
}

std::vector<double> default_sweep_grid(const std::string& axis) {
  std::vector<double> grid;
  if (axis == "embed-dim") {
    for (int d = 250; d <= 2500; d += 250) grid.push_back(d);
  } else if (axis == "pool-ratio") {
    for (int r = 4; r <= 10; ++r) grid.push_back(r / 10.0);
  } else if (axis == "sampling") {
    for (int r = 1; r <= 5; ++r) grid.push_back(r / 5.0);
  } else {
    throw ValidationError("unknown sweep axis '" + axis + "' (expected embed-dim, pool-ratio or sampling)");
  }
  return grid;
}

std::vector<VariantRun> ablation_variants(const std::string& kind, const TrainConfig& base) {
  std::vector<VariantRun> out;
  if (kind == "architecture") {
    for (auto a : {Architecture::stacking, Architecture::residual, Architecture::cascade, Architecture::gtunet}) {
      TrainConfig c = base;
      c.architecture = a;
      out.push_back({to_string(a), c});
    }
  } else if (kind == "reconstructor") {
    for (auto v : {ReconstructorVariant::mlp, ReconstructorVariant::ae, ReconstructorVariant::vae,
                   ReconstructorVariant::none}) {
      TrainConfig c = base;
      c.reconstructor = v;
      out.push_back({to_string(v), c});
    }
  } else if (kind == "modality") {
    for (auto m : {Modality::imaging, Modality::nonimaging, Modality::both}) {
      TrainConfig c = base;
      c.modality = m;
      out.push_back({to_string(m), c});
    }
  } else if (kind == "graph") {
    std::vector<AffinitySource> sources{AffinitySource::constant, AffinitySource::amrs};
    if (!base.affinity_file.empty()) sources.insert(sources.begin() + 1, AffinitySource::external);
    for (auto s : sources) {
      TrainConfig c = base;
      c.affinity_source = s;
      out.push_back({to_string(s), c});
    }
  } else {
    throw ValidationError("unknown ablation '" + kind +
                          "' (expected architecture, reconstructor, modality or graph)");
  }
  return out;
}

namespace {

// One decimal for the default grids, more only when needed.
std::string grid_label(double v) {
  std::ostringstream one;
  one << std::fixed << std::setprecision(1) << v;
  if (std::stod(one.str()) == v) return one.str();
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<VariantRun> sweep_variants(const std::string& axis, const TrainConfig& base,
                                       const std::vector<double>& grid) {
  const std::vector<double> values = grid.empty() ? default_sweep_grid(axis) : grid;
  if (grid.size() > 0) default_sweep_grid(axis);  // validates the axis name
  std::vector<VariantRun> out;
  for (double v : values) {
    TrainConfig c = base;
    std::ostringstream label;
    if (axis == "embed-dim") {
      if (v != std::floor(v) || v < 1) throw ValidationError("embed-dim grid values must be positive integers");
      c.embed_dim = static_cast<int>(v);
      label << "embed_dim_" << c.embed_dim;
    } else if (axis == "pool-ratio") {
      c.pool_ratio = v;
      label << "pool_ratio_" << grid_label(v);
    } else {
      c.sampling_ratio = v;
      label << "sampling_" << grid_label(v);
    }
    c.validate();
    out.push_back({label.str(), c});
  }
  return out;
}

}  // namespace mmgt
