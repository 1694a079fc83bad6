#pragma once

// Cohort loading, phenotype encoding, synthetic cohorts and fold planning.

#include "mmgt/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmgt {

enum class AttributeKind { categorical, continuous };

struct AttributeSchema {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  std::vector<std::string> vocabulary;  // sorted; categorical only
  std::optional<double> match_tolerance;  // continuous only
};

struct CohortSchema {
  std::vector<AttributeSchema> attributes;

  std::size_t size() const { return attributes.size(); }
};

struct SubjectRecord {
  std::string subject_id;
  Vector imaging_raw;
  std::vector<double> phenotypes;
  int label = 0;
};

struct Cohort {
  std::vector<SubjectRecord> records;
  CohortSchema schema;
  int n_roi = 0;

  std::size_t size() const { return records.size(); }
  std::vector<int> labels() const;
  Matrix imaging_matrix() const;
  Matrix phenotype_matrix() const;
  Cohort subset(const std::vector<int>& idx) const;

  /// Throws ValidationError when any Cohort/SubjectRecord invariant fails.
  void validate() const;
};

inline std::size_t fc_length(int n_roi) {
  return static_cast<std::size_t>(n_roi) * static_cast<std::size_t>(n_roi - 1) / 2;
}

/// Pearson FC of an n_roi x T time-series matrix, strict upper triangle in
/// row-major order. Rows with zero variance correlate 0 with everything.
Vector compute_fc_vector(const Matrix& timeseries);

/// Strict upper triangle of a square connectivity matrix, row-major.
Vector flatten_upper_triangle(const Matrix& fc);

/// One raw phenotype row, attribute name -> raw text value.
struct RawPhenotypeRow {
  std::string subject_id;
  std::map<std::string, std::string> values;
};

/// Fills empty categorical vocabularies with the sorted distinct values seen in rows.
void infer_vocabularies(const std::vector<RawPhenotypeRow>& rows, CohortSchema& schema);

/// Ordinal-encodes categorical attributes (index in the sorted vocabulary) and
/// passes continuous values through. Row order is preserved.
Matrix encode_phenotypes(const std::vector<RawPhenotypeRow>& rows, const CohortSchema& schema);

struct PhenotypeSource {
  std::filesystem::path path;
  std::string subject_column = "subject_id";
  std::string label_column = "label";
  std::map<std::string, int> label_map;  // raw label text -> {0,1}; empty means "0"/"1"
  char delimiter = '\0';                 // '\0' auto-detects tab or comma
};

struct ImagingSource {
  // Either a directory of per-subject matrix files named <subject_id>.<ext>
  // (ROI x T time series or n_roi x n_roi FC matrix, auto-detected)...
  std::optional<std::filesystem::path> per_subject_dir;
  // ...or one stacked N x d1 matrix with a subject-id index file.
  std::optional<std::filesystem::path> stacked_matrix;
  std::optional<std::filesystem::path> index_file;
};

struct LoadOptions {
  bool drop_missing = false;
};

struct LoadResult {
  Cohort cohort;
  std::vector<std::string> warnings;
};

LoadResult load_cohort(const ImagingSource& imaging, const PhenotypeSource& phenotypes,
                       CohortSchema schema, const LoadOptions& options = {});

/// Writes a cohort as phenotype CSV + stacked imaging matrix + index file,
/// the layout load_cohort reads back.
void write_cohort(const Cohort& cohort, const std::filesystem::path& directory);

struct SyntheticAttribute {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  int n_categories = 2;
  double informativeness = 0.0;
  double match_tolerance = 2.0;
};

struct SyntheticSpec {
  int n_subjects = 200;
  int n_roi = 40;
  std::vector<SyntheticAttribute> attributes;
  int n_informative_features = 8;
  double imaging_shift = 0.3;  // class mean difference on informative FC entries
  double imaging_noise = 0.2;  // per-entry standard deviation
};

/// Default attribute set: one categorical attribute at `informative` and two at 0.
SyntheticSpec default_synthetic_spec(double informative = 0.8);

Cohort generate_synthetic_cohort(const SyntheticSpec& spec, std::uint64_t seed);

struct Fold {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
  int n_folds = 0;
  std::uint64_t seed = 0;
};

FoldPlan make_fold_plan(const std::vector<int>& labels, int n_folds, std::uint64_t seed);

/// Stratified subsample of ceil(ratio * N) indices, sorted ascending.
std::vector<int> stratified_subsample(const std::vector<int>& labels, double ratio,
                                      std::uint64_t seed);

}  // namespace mmgt
