#pragma once

// Fold preparation, the per-fold training loop with early stopping, metrics,
// cross-validation orchestration and the ablation / sweep runners.

#include "mmgt/alignment.hpp"
#include "mmgt/amrs.hpp"
#include "mmgt/config.hpp"
#include "mmgt/data.hpp"
#include "mmgt/fusion.hpp"
#include "mmgt/gt_encoder.hpp"
#include "mmgt/objective.hpp"

#include "json.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mmgt {

struct Metrics {
  double acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
  double auc = 0.0;
  std::vector<std::string> warnings;
};

/// Positive class is label 1; the score is the class-1 softmax probability.
/// Undefined quantities (single-class sets) are NaN and carry a warning.
Metrics evaluate_metrics(const Matrix& logits, const std::vector<int>& labels,
                         const std::vector<int>& idx);

/// Mann-Whitney rank statistic with tied scores sharing their mean rank.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Class-1 probability per row of a two-column logit matrix.
std::vector<double> positive_scores(const Matrix& logits);

/// Everything that stays fixed while one fold trains.
struct PreparedFold {
  Fold fold;
  std::vector<int> visible_labels;  // test entries masked to 0
  Matrix x_img;                     // N x d
  Matrix x_non;                     // N x d
  Matrix similarity;                // kernel on the graph features, unit diagonal
  double sigma = 1.0;
  RewardTables tables;
  std::vector<Matrix> attribute_terms;
  Vector value_sums;
  Matrix fixed_affinity;  // used when the affinity source is not AMRS
  std::vector<int> rfe_columns;
};

/// Z-scores columns with statistics of the given rows; near-constant columns
/// are only centred.
Matrix standardize_columns(const Matrix& x, const std::vector<int>& rows);

/// Lifts the non-imaging block with the configured reconstructor, pretraining
/// one on the given rows when none is supplied.
Matrix lift_nonimaging(const Cohort& cohort, const TrainConfig& config, const Reconstructor* pretrained,
                       const std::vector<int>& fit_rows,
                       std::vector<ReconstructionTracePoint>* trace = nullptr);

ReconstructorConfig reconstructor_config(const TrainConfig& config, const std::string& cohort_id);

PreparedFold prepare_fold(const Cohort& cohort, const Fold& fold, const Matrix& lifted_nonimaging,
                          const TrainConfig& config, const Matrix* external_affinity = nullptr);

class MultiModalModel {
 public:
  MultiModalModel(const TrainConfig& config, Eigen::Index input_dim, std::size_t n_attributes,
                  std::uint64_t seed);

  std::vector<ad::Var> parameters() const;

  const GtEncoder* imaging_encoder() const { return enc_img_.get(); }
  const GtEncoder* nonimaging_encoder() const { return enc_non_.get(); }
  const FusionParams& fusion() const { return fusion_; }
  const HeadParams& head() const { return head_; }
  const AlphaWeights& alpha() const { return alpha_; }
  AlphaWeights& alpha() { return alpha_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  std::unique_ptr<GtEncoder> enc_img_;
  std::unique_ptr<GtEncoder> enc_non_;
  FusionParams fusion_;
  HeadParams head_;
  AlphaWeights alpha_;
};

struct ForwardOutput {
  ad::Var logits;
  ad::Var z_img;
  ad::Var z_non;
  ad::Var z;
  ad::Var omega;
  ad::Var adjacency;
  Objective objective;  // populated when with_loss is set
  EncoderTrace trace_img;
  EncoderTrace trace_non;
};

struct PassOptions {
  bool training = false;
  bool with_loss = true;
  std::uint64_t graph_seed = 0;     // edge-dropout stream
  Rng* feature_rng = nullptr;       // feature-dropout stream
  bool capture_attention = false;
  bool drop_edges = false;          // edge dropout outside training (MC inference)
};

ForwardOutput forward_pass(const MultiModalModel& model, const PreparedFold& prepared,
                           const PassOptions& options);

/// Logits used for evaluation: the full graph, or the mean class probabilities
/// over mc_samples dropout graphs when configured.
Matrix inference_logits(const MultiModalModel& model, const PreparedFold& prepared,
                        std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double val_acc = 0.0;
  std::vector<double> alpha;
};

struct FoldResult {
  int fold = 0;
  bool failed = false;
  std::string error;
  Metrics test;
  double best_val_acc = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  double seconds = 0.0;
  double omega_img = 0.0;
  double omega_non = 0.0;
  std::vector<double> alpha;
  std::vector<EpochRecord> trace;
  std::vector<int> test_idx;
  std::vector<double> test_scores;
  std::vector<int> test_predicted;
  std::vector<int> test_labels;

  // Not serialised.
  Matrix z_img, z_non, z;
  std::vector<Matrix> parameters;
};

/// Trains one fold from scratch. evaluation_labels are read only after
/// training, to score the test rows. Non-finite losses raise RuntimeFailure.
FoldResult train_fold(const PreparedFold& prepared, const TrainConfig& config, int fold_index,
                      std::uint64_t seed, const std::vector<int>& evaluation_labels);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

/// Mean and population standard deviation over finite values.
MetricSummary summarize(const std::vector<double>& values);

/// Percent with two decimals, e.g. "82.92 (0.54)".
std::string format_mean_std(const MetricSummary& s);

struct RunReport {
  std::string name;
  ConfigMap config;
  int n_folds = 0;
  bool failed = false;
  std::vector<FoldResult> folds;
  MetricSummary acc, sen, spe, auc;
  double omega_img = 0.0;
  double omega_non = 0.0;
  std::vector<double> alpha;
  std::vector<std::string> attribute_names;
  std::vector<std::string> subject_ids;
  std::vector<ReconstructionTracePoint> reconstructor_trace;
  std::vector<std::string> warnings;
  double seconds = 0.0;

  void aggregate();
  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

struct RunOptions {
  std::string name = "run";
  const Reconstructor* pretrained = nullptr;
  const Matrix* external_affinity = nullptr;
  std::string cohort_id = "cohort";
};

/// Subsamples (when sampling_ratio < 1), plans folds, trains every fold and
/// aggregates. A failing fold marks the report failed; other folds still run.
RunReport run_cross_validation(const Cohort& cohort, const TrainConfig& config,
                               const RunOptions& options = {});

/// report.json, contributions.tsv and per-fold predictions, traces and embeddings.
void write_run_artifacts(const RunReport& report, const std::filesystem::path& directory);

struct VariantRun {
  std::string label;
  TrainConfig config;
};

std::vector<double> default_sweep_grid(const std::string& axis);

/// "architecture", "reconstructor", "modality" or "graph".
std::vector<VariantRun> ablation_variants(const std::string& kind, const TrainConfig& base);

/// "embed-dim", "pool-ratio" or "sampling"; an empty grid selects the default.
std::vector<VariantRun> sweep_variants(const std::string& axis, const TrainConfig& base,
                                       const std::vector<double>& grid = {});

}  // namespace mmgt
