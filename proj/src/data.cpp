#include "mmgt/data.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/matrix_io.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mmgt {

std::vector<int> Cohort::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

Matrix Cohort::imaging_matrix() const {
  if (records.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(records.size()), records.front().imaging_raw.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = records[i].imaging_raw.transpose();
  }
  return m;
}

Matrix Cohort::phenotype_matrix() const {
  Matrix m(static_cast<Eigen::Index>(records.size()),
           static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t u = 0; u < schema.size(); ++u) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = records[i].phenotypes[u];
    }
  }
  return m;
}

Cohort Cohort::subset(const std::vector<int>& idx) const {
  Cohort out;
  out.schema = schema;
  out.n_roi = n_roi;
  out.records.reserve(idx.size());
  for (int i : idx) out.records.push_back(records.at(static_cast<std::size_t>(i)));
  return out;
}

void Cohort::validate() const {
  if (records.size() < 2) {
    throw ValidationError("cohort needs at least 2 subjects and both labels (got " +
                          std::to_string(records.size()) + " subject(s))");
  }
  if (n_roi < 2) throw ValidationError("cohort n_roi must be >= 2");
  const auto d1 = static_cast<Eigen::Index>(fc_length(n_roi));
  bool seen[2] = {false, false};
  for (const auto& r : records) {
    if (r.label != 0 && r.label != 1) {
      throw ValidationError("subject " + r.subject_id + ": label must be 0 or 1");
    }
    seen[r.label] = true;
    if (r.imaging_raw.size() != d1) {
      throw ValidationError("subject " + r.subject_id + ": imaging length " +
                            std::to_string(r.imaging_raw.size()) + " != " + std::to_string(d1));
    }
    if (r.phenotypes.size() != schema.size()) {
      throw ValidationError("subject " + r.subject_id + ": phenotype count mismatch");
    }
    for (std::size_t u = 0; u < schema.size(); ++u) {
      const double value = r.phenotypes[u];
      if (!std::isfinite(value)) {
        throw ValidationError("subject " + r.subject_id + ": non-finite " +
                              schema.attributes[u].name);
      }
      if (schema.attributes[u].kind == AttributeKind::categorical) {
        const auto vocab = static_cast<double>(schema.attributes[u].vocabulary.size());
        if (value < 0 || value >= vocab || value != std::floor(value)) {
          throw ValidationError("subject " + r.subject_id + ": code out of vocabulary for " +
                                schema.attributes[u].name);
        }
      }
    }
  }
  if (!seen[0] || !seen[1]) throw ValidationError("cohort must contain both labels 0 and 1");
}

Vector compute_fc_vector(const Matrix& timeseries) {
  const Eigen::Index n = timeseries.rows();
  const Eigen::Index t = timeseries.cols();
  if (n < 2) throw ValidationError("compute_fc_vector: need at least 2 ROIs");
  if (t < 3) throw ValidationError("compute_fc_vector: need at least 3 time points");
  if (!timeseries.allFinite()) throw ValidationError("compute_fc_vector: non-finite input");

  Matrix centered = timeseries.colwise() - timeseries.rowwise().mean();
  Vector norms = centered.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = timeseries.row(i).cwiseAbs().maxCoeff();
    // A constant row leaves only rounding residue after centring.
    if (norms(i) <= 1e-12 * scale * std::sqrt(static_cast<double>(t))) norms(i) = 0.0;
  }
  Vector out(static_cast<Eigen::Index>(fc_length(static_cast<int>(n))));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double r = 0.0;
      if (norms(i) > 0.0 && norms(j) > 0.0) {
        r = centered.row(i).dot(centered.row(j)) / (norms(i) * norms(j));
        r = std::clamp(r, -1.0, 1.0);
      }
      out(k++) = r;
    }
  }
  return out;
}

Vector flatten_upper_triangle(const Matrix& fc) {
  if (fc.rows() != fc.cols() || fc.rows() < 2) {
    throw ValidationError("flatten_upper_triangle: need a square matrix with >= 2 rows");
  }
  const Eigen::Index n = fc.rows();
  Vector out(static_cast<Eigen::Index>(fc_length(static_cast<int>(n))));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) out(k++) = fc(i, j);
  }
  return out;
}

void infer_vocabularies(const std::vector<RawPhenotypeRow>& rows, CohortSchema& schema) {
  for (auto& attr : schema.attributes) {
    if (attr.kind != AttributeKind::categorical) continue;
    std::set<std::string> values(attr.vocabulary.begin(), attr.vocabulary.end());
    if (attr.vocabulary.empty()) {
      for (const auto& row : rows) {
        auto it = row.values.find(attr.name);
        if (it != row.values.end() && !it->second.empty()) values.insert(it->second);
      }
    }
    attr.vocabulary.assign(values.begin(), values.end());
  }
}

Matrix encode_phenotypes(const std::vector<RawPhenotypeRow>& rows, const CohortSchema& schema) {
  std::vector<std::vector<std::string>> sorted_vocab;
  for (const auto& attr : schema.attributes) {
    std::vector<std::string> v = attr.vocabulary;
    std::sort(v.begin(), v.end());
    sorted_vocab.push_back(std::move(v));
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    for (std::size_t u = 0; u < schema.size(); ++u) {
      const auto& attr = schema.attributes[u];
      auto it = row.values.find(attr.name);
      if (it == row.values.end() || it->second.empty()) {
        throw ValidationError("subject " + row.subject_id + ": missing attribute '" + attr.name +
                              "'");
      }
      const std::string& raw = it->second;
      double code = 0.0;
      if (attr.kind == AttributeKind::categorical) {
        const auto& vocab = sorted_vocab[u];
        auto pos = std::lower_bound(vocab.begin(), vocab.end(), raw);
        if (pos == vocab.end() || *pos != raw) {
          throw ValidationError("subject " + row.subject_id + ": value '" + raw +
                                "' not in vocabulary of '" + attr.name + "'");
        }
        code = static_cast<double>(pos - vocab.begin());
      } else {
        try {
          std::size_t used = 0;
          code = std::stod(raw, &used);
          if (used != raw.size()) throw std::invalid_argument(raw);
        } catch (const std::exception&) {
          throw ValidationError("subject " + row.subject_id + ": non-numeric value '" + raw +
                                "' for '" + attr.name + "'");
        }
        if (!std::isfinite(code)) {
          throw ValidationError("subject " + row.subject_id + ": non-finite '" + attr.name + "'");
        }
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = code;
    }
  }
  return out;
}

namespace {

int roi_count_for_length(Eigen::Index d1) {
  const auto n = static_cast<int>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * d1)) / 2.0));
  if (static_cast<Eigen::Index>(fc_length(n)) != d1) {
    throw ValidationError("imaging width " + std::to_string(d1) +
                          " is not n(n-1)/2 for any ROI count");
  }
  return n;
}

bool looks_like_fc(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() < 2) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8) return false;
  return (m.diagonal().array() - 1.0).abs().maxCoeff() < 1e-6;
}

Vector imaging_from_file(const std::filesystem::path& path) {
  Matrix m = io::read_matrix(path);
  if (looks_like_fc(m)) return flatten_upper_triangle(m);
  return compute_fc_vector(m);
}

std::optional<std::filesystem::path> find_subject_file(const std::filesystem::path& dir,
                                                       const std::string& subject) {
  for (const char* ext : {".txt", ".csv", ".tsv", ".1D", ".bin"}) {
    auto candidate = dir / (subject + ext);
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return std::nullopt;
}

struct PhenotypeTable {
  std::vector<RawPhenotypeRow> rows;
  std::vector<int> labels;
};

PhenotypeTable read_phenotypes(const PhenotypeSource& src, const CohortSchema& schema,
                               bool drop_missing, std::vector<std::string>& warnings) {
  auto lines = io::read_lines(src.path);
  while (!lines.empty() && io::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError(src.path.string() + ": empty phenotype table");
  char delim = src.delimiter;
  if (delim == '\0') delim = lines[0].find('\t') != std::string::npos ? '\t' : ',';
  const auto header = io::split(lines[0], delim);
  auto column_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ValidationError(src.path.string() + ": missing required column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t subject_col = column_of(src.subject_column);
  const std::size_t label_col = column_of(src.label_column);
  std::vector<std::size_t> attr_cols;
  for (const auto& attr : schema.attributes) attr_cols.push_back(column_of(attr.name));

  PhenotypeTable table;
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (io::trim(lines[ln]).empty()) continue;
    auto fields = io::split(lines[ln], delim);
    fields.resize(std::max(fields.size(), header.size()));
    RawPhenotypeRow row;
    row.subject_id = fields[subject_col];
    if (row.subject_id.empty()) {
      throw ValidationError(src.path.string() + ":" + std::to_string(ln + 1) +
                            ": empty subject id");
    }
    if (!seen.insert(row.subject_id).second) {
      throw ValidationError("duplicate subject id " + row.subject_id);
    }
    const std::string& raw_label = fields[label_col];
    int label = -1;
    if (src.label_map.empty()) {
      if (raw_label == "0") label = 0;
      if (raw_label == "1") label = 1;
    } else if (auto it = src.label_map.find(raw_label); it != src.label_map.end()) {
      label = it->second;
    }
    bool missing = false;
    for (std::size_t u = 0; u < schema.size(); ++u) {
      const std::string& value = fields[attr_cols[u]];
      if (value.empty() || value == "NA" || value == "nan") missing = true;
      row.values[schema.attributes[u].name] = value;
    }
    if (label < 0) {
      if (!drop_missing) {
        throw ValidationError("subject " + row.subject_id + ": unrecognised label '" +
                              raw_label + "'");
      }
      warnings.push_back("dropped subject " + row.subject_id + ": unrecognised label");
      continue;
    }
    if (missing) {
      if (!drop_missing) {
        throw ValidationError("subject " + row.subject_id + ": missing phenotype attribute");
      }
      warnings.push_back("dropped subject " + row.subject_id + ": missing phenotype attribute");
      continue;
    }
    table.rows.push_back(std::move(row));
    table.labels.push_back(label);
  }
  return table;
}

}  // namespace

LoadResult load_cohort(const ImagingSource& imaging, const PhenotypeSource& phenotypes,
                       CohortSchema schema, const LoadOptions& options) {
  LoadResult result;
  for (const auto& attr : schema.attributes) {
    if (attr.kind == AttributeKind::continuous && !attr.match_tolerance) {
      throw ValidationError("continuous attribute '" + attr.name + "' needs a match tolerance");
    }
  }
  auto table = read_phenotypes(phenotypes, schema, options.drop_missing, result.warnings);

  std::unordered_map<std::string, Vector> stacked;
  if (imaging.stacked_matrix) {
    if (!imaging.index_file) throw ValidationError("stacked imaging matrix needs an index file");
    Matrix m = io::read_matrix(*imaging.stacked_matrix);
    std::vector<std::string> ids;
    for (const auto& line : io::read_lines(*imaging.index_file)) {
      if (!io::trim(line).empty()) ids.push_back(io::trim(line));
    }
    if (static_cast<Eigen::Index>(ids.size()) != m.rows()) {
      throw ValidationError("index file lists " + std::to_string(ids.size()) +
                            " subjects but the imaging matrix has " + std::to_string(m.rows()) +
                            " rows");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      stacked[ids[i]] = m.row(static_cast<Eigen::Index>(i)).transpose();
    }
  } else if (!imaging.per_subject_dir) {
    throw ValidationError("no imaging source given");
  }

  std::vector<RawPhenotypeRow> kept_rows;
  std::vector<Vector> kept_imaging;
  std::vector<int> kept_labels;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    std::optional<Vector> img;
    if (imaging.stacked_matrix) {
      if (auto it = stacked.find(row.subject_id); it != stacked.end()) img = it->second;
    } else if (auto file = find_subject_file(*imaging.per_subject_dir, row.subject_id)) {
      img = imaging_from_file(*file);
    }
    if (!img) {
      if (!options.drop_missing) {
        throw ValidationError("subject " + row.subject_id + " has no imaging entry");
      }
      result.warnings.push_back("dropped subject " + row.subject_id + ": no imaging entry");
      continue;
    }
    if (!img->allFinite()) throw ValidationError("subject " + row.subject_id + ": non-finite imaging");
    if (!kept_imaging.empty() && img->size() != kept_imaging.front().size()) {
      throw ValidationError("subject " + row.subject_id + ": imaging dimension " +
                            std::to_string(img->size()) + " differs from " +
                            std::to_string(kept_imaging.front().size()));
    }
    kept_rows.push_back(row);
    kept_imaging.push_back(std::move(*img));
    kept_labels.push_back(table.labels[i]);
  }
  if (kept_rows.empty()) throw ValidationError("no subjects left after joining modalities");

  infer_vocabularies(kept_rows, schema);
  Matrix codes = encode_phenotypes(kept_rows, schema);

  Cohort& cohort = result.cohort;
  cohort.schema = schema;
  cohort.n_roi = roi_count_for_length(kept_imaging.front().size());
  for (std::size_t i = 0; i < kept_rows.size(); ++i) {
    SubjectRecord rec;
    rec.subject_id = kept_rows[i].subject_id;
    rec.imaging_raw = std::move(kept_imaging[i]);
    rec.label = kept_labels[i];
    rec.phenotypes.resize(schema.size());
    for (std::size_t u = 0; u < schema.size(); ++u) {
      rec.phenotypes[u] = codes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u));
    }
    cohort.records.push_back(std::move(rec));
  }
  cohort.validate();
  return result;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  {
    std::ofstream out(directory / "phenotypes.csv");
    if (!out) throw RuntimeFailure("cannot write phenotypes.csv");
    out << std::setprecision(17) << "subject_id,label";
    for (const auto& attr : cohort.schema.attributes) out << ',' << attr.name;
    out << '\n';
    for (const auto& r : cohort.records) {
      out << r.subject_id << ',' << r.label;
      for (std::size_t u = 0; u < cohort.schema.size(); ++u) {
        const auto& attr = cohort.schema.attributes[u];
        out << ',';
        if (attr.kind == AttributeKind::categorical) {
          out << attr.vocabulary.at(static_cast<std::size_t>(r.phenotypes[u]));
        } else {
          out << r.phenotypes[u];
        }
      }
      out << '\n';
    }
  }
  io::write_matrix_text(directory / "imaging.txt", cohort.imaging_matrix());
  std::ofstream index(directory / "index.txt");
  for (const auto& r : cohort.records) index << r.subject_id << '\n';
}

SyntheticSpec default_synthetic_spec(double informative) {
  SyntheticSpec spec;
  spec.attributes = {
      {"site", AttributeKind::categorical, 2, informative, 2.0},
      {"sex", AttributeKind::categorical, 2, 0.0, 2.0},
      {"handedness", AttributeKind::categorical, 2, 0.0, 2.0},
  };
  return spec;
}

Cohort generate_synthetic_cohort(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.n_subjects < 4) throw ValidationError("synthetic cohort needs at least 4 subjects");
  if (spec.n_roi < 2) throw ValidationError("synthetic cohort needs n_roi >= 2");
  const auto d1 = static_cast<int>(fc_length(spec.n_roi));
  if (spec.n_informative_features < 0 || spec.n_informative_features > d1) {
    throw ValidationError("n_informative_features out of range");
  }
  for (const auto& attr : spec.attributes) {
    if (attr.informativeness < 0.0 || attr.informativeness > 1.0) {
      throw ValidationError("informativeness of '" + attr.name + "' must lie in [0,1]");
    }
    if (attr.kind == AttributeKind::categorical && attr.n_categories < 2) {
      throw ValidationError("categorical attribute '" + attr.name + "' needs >= 2 categories");
    }
  }

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<int> labels(static_cast<std::size_t>(spec.n_subjects), 0);
  for (int i = 0; i < spec.n_subjects / 2; ++i) labels[static_cast<std::size_t>(i)] = 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  Vector base(d1);
  for (int k = 0; k < d1; ++k) base(k) = 0.4 * unit(rng) - 0.2;
  std::vector<int> features(static_cast<std::size_t>(d1));
  std::iota(features.begin(), features.end(), 0);
  std::shuffle(features.begin(), features.end(), rng);
  Vector direction = Vector::Zero(d1);
  for (int k = 0; k < spec.n_informative_features; ++k) {
    direction(features[static_cast<std::size_t>(k)]) = unit(rng) < 0.5 ? -1.0 : 1.0;
  }

  Cohort cohort;
  cohort.n_roi = spec.n_roi;
  for (const auto& attr : spec.attributes) {
    AttributeSchema schema_attr;
    schema_attr.name = attr.name;
    schema_attr.kind = attr.kind;
    if (attr.kind == AttributeKind::categorical) {
      const int width = static_cast<int>(std::to_string(attr.n_categories - 1).size());
      for (int c = 0; c < attr.n_categories; ++c) {
        std::ostringstream name;
        name << 'c' << std::setw(width) << std::setfill('0') << c;
        schema_attr.vocabulary.push_back(name.str());
      }
    } else {
      schema_attr.match_tolerance = attr.match_tolerance;
    }
    cohort.schema.attributes.push_back(std::move(schema_attr));
  }

  const int id_width = static_cast<int>(std::to_string(spec.n_subjects).size());
  for (int i = 0; i < spec.n_subjects; ++i) {
    SubjectRecord rec;
    std::ostringstream id;
    id << "sub" << std::setw(id_width) << std::setfill('0') << i;
    rec.subject_id = id.str();
    rec.label = labels[static_cast<std::size_t>(i)];
    const double sign = rec.label == 1 ? 0.5 : -0.5;
    rec.imaging_raw.resize(d1);
    for (int k = 0; k < d1; ++k) {
      const double v = base(k) + sign * spec.imaging_shift * direction(k) +
                       spec.imaging_noise * gauss(rng);
      rec.imaging_raw(k) = std::clamp(v, -1.0, 1.0);
    }
    for (const auto& attr : spec.attributes) {
      const bool agree = unit(rng) < 0.5 + attr.informativeness / 2.0;
      if (attr.kind == AttributeKind::categorical) {
        const int designated = rec.label % attr.n_categories;
        int value = designated;
        if (!agree) {
          if (attr.n_categories == 2) {
            value = 1 - designated;
          } else {
            std::uniform_int_distribution<int> pick(0, attr.n_categories - 2);
            value = pick(rng);
            if (value >= designated) ++value;
          }
        }
        rec.phenotypes.push_back(static_cast<double>(value));
      } else {
        const int source = agree ? rec.label : 1 - rec.label;
        const double centre = 10.0 + 3.0 * attr.match_tolerance * source;
        rec.phenotypes.push_back(centre + attr.match_tolerance * (unit(rng) - 0.5));
      }
    }
    cohort.records.push_back(std::move(rec));
  }
  cohort.validate();
  return cohort;
}

namespace {

std::vector<std::vector<int>> class_members(const std::vector<int>& labels) {
  std::vector<std::vector<int>> members(2);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw ValidationError("labels must be binary");
    members[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  return members;
}

}  // namespace

FoldPlan make_fold_plan(const std::vector<int>& labels, int n_folds, std::uint64_t seed) {
  if (n_folds < 3) throw ValidationError("n_folds must be >= 3 to hold train/val/test splits");
  auto members = class_members(labels);
  for (int c = 0; c < 2; ++c) {
    if (static_cast<int>(members[static_cast<std::size_t>(c)].size()) < n_folds) {
      throw ValidationError("class " + std::to_string(c) + " has " +
                            std::to_string(members[static_cast<std::size_t>(c)].size()) +
                            " subjects, too few to stratify into " + std::to_string(n_folds) +
                            " folds");
    }
  }
  Rng rng(seed);
  for (auto& m : members) std::shuffle(m.begin(), m.end(), rng);

  // blocks[k][c]: class-c members of block k, in shuffled order. Dealing both
  // classes from one running counter keeps block totals within one of each other.
  const auto F = static_cast<std::size_t>(n_folds);
  std::vector<std::array<std::vector<int>, 2>> blocks(F);
  std::size_t counter = 0;
  for (int c = 0; c < 2; ++c) {
    for (int idx : members[static_cast<std::size_t>(c)]) {
      blocks[counter % F][static_cast<std::size_t>(c)].push_back(idx);
      ++counter;
    }
  }

  const double n_total = static_cast<double>(labels.size());
  const double share = 1.0 / n_folds;
  const double train_share = 1.0 - 2.0 * share;

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  for (std::size_t k = 0; k < F; ++k) {
    Fold fold;
    std::array<int, 2> test_count{};
    for (int c = 0; c < 2; ++c) {
      const auto& blk = blocks[k][static_cast<std::size_t>(c)];
      fold.test.insert(fold.test.end(), blk.begin(), blk.end());
      test_count[static_cast<std::size_t>(c)] = static_cast<int>(blk.size());
    }

    // Pick per-class validation counts so val and train stay within one subject
    // of their exact share, both per class and overall.
    std::array<std::vector<int>, 2> candidates;
    for (int c = 0; c < 2; ++c) {
      const double n_c = static_cast<double>(members[static_cast<std::size_t>(c)].size());
      const double target = n_c * share;
      for (int v = static_cast<int>(std::ceil(target - 1.0)); v <= static_cast<int>(target + 1.0);
           ++v) {
        const double train_c = n_c - test_count[static_cast<std::size_t>(c)] - v;
        if (v >= 0 && std::abs(train_c - n_c * train_share) <= 1.0 + 1e-9) {
          candidates[static_cast<std::size_t>(c)].push_back(v);
        }
      }
    }
    double best_cost = std::numeric_limits<double>::infinity();
    std::array<int, 2> val_count{-1, -1};
    for (int v0 : candidates[0]) {
      for (int v1 : candidates[1]) {
        const double v = v0 + v1;
        const double tr = n_total - static_cast<double>(fold.test.size()) - v;
        if (std::abs(v - n_total * share) > 1.0 + 1e-9) continue;
        if (std::abs(tr - n_total * train_share) > 1.0 + 1e-9) continue;
        const double cost = std::pow(v0 - members[0].size() * share, 2) +
                            std::pow(v1 - members[1].size() * share, 2);
        if (cost < best_cost) {
          best_cost = cost;
          val_count = {v0, v1};
        }
      }
    }
    if (val_count[0] < 0) {
      throw ValidationError("cannot realise a stratified train/val/test split for fold " +
                            std::to_string(k));
    }
    for (int c = 0; c < 2; ++c) {
      int need = val_count[static_cast<std::size_t>(c)];
      for (std::size_t step = 1; step < F && need > 0; ++step) {
        const auto& blk = blocks[(k + step) % F][static_cast<std::size_t>(c)];
        for (std::size_t t = 0; t < blk.size() && need > 0; ++t, --need) {
          fold.val.push_back(blk[t]);
        }
      }
    }
    std::vector<char> held(labels.size(), 0);
    for (int i : fold.test) held[static_cast<std::size_t>(i)] = 1;
    for (int i : fold.val) held[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!held[i]) fold.train.push_back(static_cast<int>(i));
    }
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.val.begin(), fold.val.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

std::vector<int> stratified_subsample(const std::vector<int>& labels, double ratio,
                                      std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("sampling ratio must lie in (0,1]");
  auto members = class_members(labels);
  const auto total = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(labels.size()) - 1e-9));
  // Largest-remainder allocation of the sample across classes.
  std::array<double, 2> exact{};
  std::array<std::size_t, 2> take{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    exact[c] = static_cast<double>(total) * static_cast<double>(members[c].size()) /
               static_cast<double>(labels.size());
    take[c] = static_cast<std::size_t>(std::floor(exact[c]));
    assigned += take[c];
  }
  while (assigned < total) {
    const std::size_t c = (exact[0] - take[0]) >= (exact[1] - take[1]) ? 0 : 1;
    const std::size_t pick = take[c] < members[c].size() ? c : 1 - c;
    ++take[pick];
    exact[pick] = static_cast<double>(take[pick]);
    ++assigned;
  }
  Rng rng(seed);
  std::vector<int> out;
  for (std::size_t c = 0; c < 2; ++c) {
    std::shuffle(members[c].begin(), members[c].end(), rng);
    out.insert(out.end(), members[c].begin(), members[c].begin() + static_cast<long>(take[c]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mmgt
