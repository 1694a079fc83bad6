#include "mmgt/cli.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/matrix_io.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

namespace mmgt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw RuntimeFailure("sha256 failed");
  }
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int k = 0; k < length; ++k) out << std::setw(2) << static_cast<int>(digest[k]);
  return out.str();
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed4(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string sha256_directory(const fs::path& path) {
  if (!fs::is_directory(path)) throw ValidationError("not a directory: " + path.string());
  std::vector<std::string> lines;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    lines.push_back(fs::relative(entry.path(), path).generic_string() + " " + sha256_file(entry.path()));
  }
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  return sha256_hex(joined);
}

json RunManifest::to_json() const {
  json j;
  j["tool_version"] = tool_version;
  j["timestamp"] = timestamp;
  j["command"] = command;
  j["config"] = config;
  j["input_digests"] = input_digests;
  j["artifacts"] = artifacts;
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.timestamp = j.at("timestamp").get<std::string>();
  m.command = j.at("command").get<std::vector<std::string>>();
  m.config = j.at("config").get<ConfigMap>();
  m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
  m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  return m;
}

std::map<std::string, std::string> input_digests(const TrainConfig& config) {
  std::map<std::string, std::string> out;
  auto add_file = [&](const std::string& p) {
    if (p.empty()) return;
    if (!fs::is_regular_file(p)) throw ValidationError("input file not found: " + p);
    out[p] = sha256_file(p);
  };
  add_file(config.phenotype_file);
  add_file(config.imaging_matrix);
  add_file(config.imaging_index);
  add_file(config.affinity_file);
  add_file(config.vae_checkpoint);
  if (!config.imaging_dir.empty()) {
    if (!fs::is_directory(config.imaging_dir)) {
      throw ValidationError("imaging directory not found: " + config.imaging_dir);
    }
    out[config.imaging_dir] = sha256_directory(config.imaging_dir);
  }
  return out;
}

ParsedConfig parse_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  if (file && !fs::is_regular_file(*file)) throw ValidationError("config file not found: " + file->string());
  ParsedConfig parsed;
  parsed.config = resolve_config(file, parse_overrides(overrides));
  parsed.manifest.config = config_to_map(parsed.config);
  parsed.manifest.input_digests = input_digests(parsed.config);
  if (file) parsed.manifest.input_digests[file->string()] = sha256_file(*file);
  parsed.manifest.timestamp = utc_timestamp();
  return parsed;
}

CohortSchema parse_attribute_schema(const std::string& text) {
  CohortSchema schema;
  for (const auto& raw : io::split(text, ',')) {
    const std::string item = io::trim(raw);
    if (item.empty()) continue;
    const auto parts = io::split(item, ':');
    AttributeSchema attr;
    attr.name = io::trim(parts[0]);
    const std::string kind = parts.size() > 1 ? io::trim(parts[1]) : "";
    if (attr.name.empty()) throw ValidationError("attribute entry '" + item + "' has no name");
    if (kind == "categorical" && parts.size() == 2) {
      attr.kind = AttributeKind::categorical;
    } else if (kind == "continuous" && parts.size() == 3) {
      attr.kind = AttributeKind::continuous;
      const std::string t = io::trim(parts[2]);
      double tol = 0.0;
      auto res = std::from_chars(t.data(), t.data() + t.size(), tol);
      if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !(tol >= 0.0)) {
        throw ValidationError("attribute '" + attr.name + "' needs a non-negative tolerance");
      }
      attr.match_tolerance = tol;
    } else {
      throw ValidationError("attribute entry '" + item +
                            "' must be name:categorical or name:continuous:tolerance");
    }
    schema.attributes.push_back(attr);
  }
  return schema;
}

std::map<std::string, int> parse_label_map(const std::string& text) {
  std::map<std::string, int> out;
  for (const auto& raw : io::split(text, ',')) {
    const std::string item = io::trim(raw);
    if (item.empty()) continue;
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw ValidationError("label_map entry '" + item + "' is not raw:code");
    const std::string key = io::trim(item.substr(0, colon));
    const std::string code = io::trim(item.substr(colon + 1));
    if (code != "0" && code != "1") throw ValidationError("label_map codes must be 0 or 1, got '" + code + "'");
    if (!out.emplace(key, code == "1" ? 1 : 0).second) {
      throw ValidationError("label_map lists '" + key + "' twice");
    }
  }
  return out;
}

LoadedCohort load_configured_cohort(const TrainConfig& config) {
  LoadedCohort loaded;
  if (config.phenotype_file.empty()) {
    if (!config.imaging_dir.empty() || !config.imaging_matrix.empty()) {
      throw ValidationError("imaging inputs are configured but phenotype_file is not");
    }
    loaded.cohort = generate_synthetic_cohort(synthetic_spec(config), config.seed);
    loaded.cohort_id = "synthetic-" + std::to_string(config.seed);
    return loaded;
  }
  if (!fs::is_regular_file(config.phenotype_file)) {
    throw ValidationError("phenotype file not found: " + config.phenotype_file);
  }
  PhenotypeSource phen;
  phen.path = config.phenotype_file;
  phen.subject_column = config.subject_column;
  phen.label_column = config.label_column;
  phen.label_map = parse_label_map(config.label_map);
  ImagingSource img;
  if (!config.imaging_dir.empty() && !config.imaging_matrix.empty()) {
    throw ValidationError("set either imaging_dir or imaging_matrix, not both");
  }
  if (!config.imaging_dir.empty()) {
    img.per_subject_dir = config.imaging_dir;
  } else if (!config.imaging_matrix.empty()) {
    if (config.imaging_index.empty()) throw ValidationError("imaging_matrix needs imaging_index");
    img.stacked_matrix = config.imaging_matrix;
    img.index_file = config.imaging_index;
  } else {
    throw ValidationError("no imaging input configured (imaging_dir or imaging_matrix)");
  }
  CohortSchema schema = parse_attribute_schema(config.attributes);
  if (schema.size() == 0) throw ValidationError("data.attributes must list at least one attribute");
  LoadOptions options;
  options.drop_missing = config.drop_missing;
  LoadResult result = load_cohort(img, phen, schema, options);
  loaded.cohort = std::move(result.cohort);
  loaded.warnings = std::move(result.warnings);
  loaded.cohort_id = sha256_file(config.phenotype_file).substr(0, 12);
  return loaded;
}

fs::path resolve_artifact_path(const std::string& requested) {
  const fs::path p(requested);
  if (p.is_absolute()) return p.lexically_normal();
  const char* root = std::getenv(kArtifactRootVariable);
  const fs::path base = root && *root ? fs::path(root) : fs::current_path();
  return fs::absolute(base / p).lexically_normal();
}

RenderedReport render_reports(const std::vector<RunReport>& reports) {
  RenderedReport r;
  std::ostringstream md;
  std::ostringstream tsv;
  std::ostringstream contrib;
  std::ostringstream alpha;
  tsv << "run\tfold\tacc\tsen\tspe\tauc\tomega_img\tomega_non\tbest_epoch\tepochs_run\tfailed\n";
  contrib << "run\tomega_img\tomega_non\n";
  alpha << "run\tattribute\tweight\n";

  md << "| run | ACC | SEN | SPE | AUC | folds |\n|---|---|---|---|---|---|\n";
  for (const auto& rep : reports) {
    md << "| " << rep.name << " | " << format_mean_std(rep.acc) << " | " << format_mean_std(rep.sen)
       << " | " << format_mean_std(rep.spe) << " | " << format_mean_std(rep.auc) << " | "
       << rep.folds.size() << (rep.failed ? " (failed)" : "") << " |\n";
  }
  for (const auto& rep : reports) {
    md << "\n## " << rep.name << "\n\n";
    md << "| fold | ACC | SEN | SPE | AUC | omega_img | omega_non | best epoch |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& f : rep.folds) {
      if (f.failed) {
        md << "| " << f.fold << " | failed: " << f.error << " | | | | | | |\n";
      } else {
        md << "| " << f.fold << " | " << fixed4(f.test.acc) << " | " << fixed4(f.test.sen) << " | "
           << fixed4(f.test.spe) << " | " << fixed4(f.test.auc) << " | " << fixed4(f.omega_img)
           << " | " << fixed4(f.omega_non) << " | " << f.best_epoch << " |\n";
      }
      tsv << rep.name << "\t" << f.fold << "\t" << shortest(f.test.acc) << "\t" << shortest(f.test.sen)
          << "\t" << shortest(f.test.spe) << "\t" << shortest(f.test.auc) << "\t"
          << shortest(f.omega_img) << "\t" << shortest(f.omega_non) << "\t" << f.best_epoch << "\t"
          << f.epochs_run << "\t" << (f.failed ? 1 : 0) << "\n";
    }
    md << "| mean (std) | " << format_mean_std(rep.acc) << " | " << format_mean_std(rep.sen) << " | "
       << format_mean_std(rep.spe) << " | " << format_mean_std(rep.auc) << " | "
       << fixed4(rep.omega_img) << " | " << fixed4(rep.omega_non) << " | |\n";
    if (!rep.attribute_names.empty() && !rep.alpha.empty()) {
      md << "\nalpha:";
      for (std::size_t u = 0; u < rep.attribute_names.size() && u < rep.alpha.size(); ++u) {
        md << " " << rep.attribute_names[u] << "=" << fixed4(rep.alpha[u]);
      }
      md << "\n";
    }
    for (const auto& w : rep.warnings) md << "\nwarning: " << w << "\n";
    contrib << rep.name << "\t" << shortest(rep.omega_img) << "\t" << shortest(rep.omega_non) << "\n";
    for (std::size_t u = 0; u < rep.attribute_names.size() && u < rep.alpha.size(); ++u) {
      alpha << rep.name << "\t" << rep.attribute_names[u] << "\t" << shortest(rep.alpha[u]) << "\n";
    }
  }
  r.files["metrics.md"] = md.str();
  r.files["metrics.tsv"] = tsv.str();
  r.files["contribution_bars.tsv"] = contrib.str();
  r.files["alpha_bars.tsv"] = alpha.str();
  return r;
}

namespace {

/// Work happens in a hidden sibling directory that replaces the target only
/// on commit; anything else removes it.
class StagedDirectory {
 public:
  StagedDirectory(fs::path target, bool force) : target_(std::move(target)) {
    if (target_.filename().empty()) target_ = target_.parent_path();
    if (fs::exists(target_) && !force) {
      throw ValidationError("artifact directory " + target_.string() + " exists (use --force)");
    }
    staging_ = target_.parent_path() / ("." + target_.filename().string() + ".staging");
    std::error_code ec;
    fs::remove_all(staging_, ec);
    fs::create_directories(staging_);
  }
  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;
  ~StagedDirectory() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }
  const fs::path& target() const { return target_; }

  void commit() {
    if (fs::exists(target_)) fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "manifest.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_manifest(RunManifest manifest, const fs::path& dir) {
  manifest.artifacts = list_artifacts(dir);
  write_file(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

void write_rendered(const RenderedReport& rendered, const fs::path& dir) {
  for (const auto& [name, content] : rendered.files) write_file(dir / name, content);
}

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::string preset;
  std::string out;
  bool force = false;
};

ParsedConfig parse_common(const Common& c, const std::vector<std::string>& args) {
  std::vector<std::string> overrides = c.set;
  if (!c.preset.empty()) overrides.push_back("preset=" + c.preset);
  std::optional<fs::path> file;
  if (!c.config.empty()) file = c.config;
  ParsedConfig parsed = parse_config(file, overrides);
  parsed.manifest.command = args;
  return parsed;
}

std::optional<Matrix> load_external_affinity(const TrainConfig& config) {
  if (config.affinity_file.empty()) return std::nullopt;
  return io::read_matrix(config.affinity_file);
}

std::unique_ptr<Reconstructor> load_checkpoint(const TrainConfig& config) {
  if (config.vae_checkpoint.empty()) return nullptr;
  return std::make_unique<Reconstructor>(Reconstructor::load(config.vae_checkpoint));
}

void summary_line(std::ostream& out, const RunReport& report) {
  out << report.name << ": ACC " << format_mean_std(report.acc) << "  SEN " << format_mean_std(report.sen)
      << "  SPE " << format_mean_std(report.spe) << "  AUC " << format_mean_std(report.auc)
      << (report.failed ? "  [failed]" : "") << "\n";
}

/// Runs variants one after another, pretraining each distinct reconstructor once.
class VariantRunner {
 public:
  VariantRunner(const LoadedCohort& loaded, const TrainConfig& base)
      : loaded_(loaded), checkpoint_(load_checkpoint(base)), external_(load_external_affinity(base)) {}

  RunReport run(const TrainConfig& config, const std::string& name) {
    RunOptions options;
    options.name = name;
    options.cohort_id = loaded_.cohort_id;
    if (external_) options.external_affinity = &*external_;
    if (checkpoint_) {
      options.pretrained = checkpoint_.get();
    } else if (!config.vae_train_only && config.sampling_ratio >= 1.0) {
      options.pretrained = &shared(config);
    }
    RunReport report = run_cross_validation(loaded_.cohort, config, options);
    for (const auto& w : loaded_.warnings) report.warnings.push_back(w);
    return report;
  }

 private:
  const Reconstructor& shared(const TrainConfig& config) {
    const ReconstructorConfig rc = reconstructor_config(config, "cohort");
    std::ostringstream key;
    key << to_string(rc.variant) << '|' << rc.latent_dim << '|' << shortest(rc.learning_rate) << '|'
        << shortest(rc.weight_decay) << '|' << rc.epochs << '|' << rc.seed;
    auto it = cache_.find(key.str());
    if (it == cache_.end()) {
      const Matrix pheno = loaded_.cohort.phenotype_matrix();
      it = cache_.emplace(key.str(), std::make_unique<Reconstructor>(Reconstructor::pretrain(pheno, rc))).first;
    }
    return *it->second;
  }

  const LoadedCohort& loaded_;
  std::unique_ptr<Reconstructor> checkpoint_;
  std::optional<Matrix> external_;
  std::map<std::string, std::unique_ptr<Reconstructor>> cache_;
};

int command_pretrain(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
  ParsedConfig parsed = parse_common(c, args);
  const TrainConfig& config = parsed.config;
  const LoadedCohort loaded = load_configured_cohort(config);
  StagedDirectory dir(resolve_artifact_path(c.out.empty() ? "pretrain-vae" : c.out), c.force);
  const Matrix pheno = loaded.cohort.phenotype_matrix();
  const Reconstructor model = Reconstructor::pretrain(pheno, reconstructor_config(config, loaded.cohort_id));
  model.save(dir.path() / "reconstructor.bin");
  std::ostringstream trace;
  trace << "epoch\treconstruction\tkl\n";
  for (const auto& p : model.trace()) {
    trace << p.epoch << "\t" << shortest(p.reconstruction) << "\t" << shortest(p.kl) << "\n";
  }
  write_file(dir.path() / "reconstructor_trace.tsv", trace.str());
  write_file(dir.path() / "config.conf", render_config_file(config));
  write_manifest(parsed.manifest, dir.path());
  dir.commit();
  out << "reconstructor written to " << (dir.target() / "reconstructor.bin").string() << "\n";
  return 0;
}

void write_run(const RunReport& report, const TrainConfig& config, RunManifest manifest,
               const fs::path& dir) {
  write_run_artifacts(report, dir);
  write_file(dir / "config.conf", render_config_file(config));
  manifest.config = config_to_map(config);
  write_manifest(std::move(manifest), dir);
}

int command_train(const Common& c, const std::vector<std::string>& args, std::ostream& out,
                  std::ostream& err) {
  ParsedConfig parsed = parse_common(c, args);
  const TrainConfig& config = parsed.config;
  const LoadedCohort loaded = load_configured_cohort(config);
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  StagedDirectory dir(resolve_artifact_path(c.out.empty() ? "train-cv" : c.out), c.force);
  const auto checkpoint = load_checkpoint(config);
  const auto external = load_external_affinity(config);
  RunOptions options;
  options.name = "train-cv";
  options.cohort_id = loaded.cohort_id;
  options.pretrained = checkpoint.get();
  if (external) options.external_affinity = &*external;
  RunReport report = run_cross_validation(loaded.cohort, config, options);
  for (const auto& w : loaded.warnings) report.warnings.push_back(w);
  write_run(report, config, parsed.manifest, dir.path());
  dir.commit();
  summary_line(out, report);
  for (const auto& f : report.folds) {
    if (f.failed) err << "fold " << f.fold << " failed: " << f.error << "\n";
  }
  return report.failed ? 2 : 0;
}

int command_variants(const std::string& title, const std::vector<VariantRun>& variants, const Common& c,
                     const ParsedConfig& parsed, std::ostream& out, std::ostream& err) {
  const LoadedCohort loaded = load_configured_cohort(parsed.config);
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  StagedDirectory dir(resolve_artifact_path(c.out.empty() ? title : c.out), c.force);
  VariantRunner runner(loaded, parsed.config);
  std::vector<RunReport> reports;
  std::ostringstream index;
  index << "label\tdirectory\n";
  bool failed = false;
  for (const auto& v : variants) {
    err << "running " << v.label << "\n";
    RunReport report = runner.run(v.config, v.label);
    write_run(report, v.config, parsed.manifest, dir.path() / v.label);
    index << v.label << "\t" << v.label << "\n";
    summary_line(out, report);
    failed = failed || report.failed;
    reports.push_back(std::move(report));
  }
  write_file(dir.path() / "runs.tsv", index.str());
  write_rendered(render_reports(reports), dir.path());
  write_file(dir.path() / "config.conf", render_config_file(parsed.config));
  write_manifest(parsed.manifest, dir.path());
  dir.commit();
  return failed ? 2 : 0;
}

std::vector<RunReport> collect_reports(const std::vector<std::string>& inputs,
                                       std::map<std::string, std::string>& digests) {
  std::vector<RunReport> reports;
  auto read_one = [&](const fs::path& file) {
    const std::string text = read_file(file);
    digests[file.string()] = sha256_hex(text);
    json j;
    try {
      j = json::parse(text);
      reports.push_back(RunReport::from_json(j));
    } catch (const json::exception& e) {
      throw ValidationError(file.string() + " is not a RunReport: " + e.what());
    }
  };
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_regular_file(p)) {
      read_one(p);
    } else if (fs::is_regular_file(p / "report.json")) {
      read_one(p / "report.json");
    } else if (fs::is_regular_file(p / "runs.tsv")) {
      const auto lines = io::read_lines(p / "runs.tsv");
      for (std::size_t k = 1; k < lines.size(); ++k) {
        if (io::trim(lines[k]).empty()) continue;
        const auto cols = io::split(lines[k], '\t');
        if (cols.size() < 2) throw ValidationError("malformed runs.tsv in " + p.string());
        read_one(p / io::trim(cols[1]) / "report.json");
      }
    } else {
      throw ValidationError("no RunReport found at " + p.string());
    }
  }
  return reports;
}

int command_report(const Common& c, const std::vector<std::string>& inputs,
                   const std::vector<std::string>& args, std::ostream& out) {
  RunManifest manifest;
  manifest.command = args;
  manifest.timestamp = utc_timestamp();
  const std::vector<RunReport> reports = collect_reports(inputs, manifest.input_digests);
  const RenderedReport rendered = render_reports(reports);
  StagedDirectory dir(resolve_artifact_path(c.out.empty() ? "report" : c.out), c.force);
  write_rendered(rendered, dir.path());
  write_manifest(manifest, dir.path());
  dir.commit();
  out << rendered.files.at("metrics.md");
  return 0;
}

int command_synth(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
  ParsedConfig parsed = parse_common(c, args);
  const TrainConfig& config = parsed.config;
  const Cohort cohort = generate_synthetic_cohort(synthetic_spec(config), config.seed);
  StagedDirectory dir(resolve_artifact_path(c.out.empty() ? "synthetic" : c.out), c.force);
  write_cohort(cohort, dir.path());
  std::string attributes;
  for (const auto& a : cohort.schema.attributes) {
    attributes += (attributes.empty() ? "" : ",") + a.name + ":categorical";
  }
  const fs::path target = dir.target();
  std::ostringstream conf;
  conf << "[data]\n"
       << "phenotype_file = " << (target / "phenotypes.csv").string() << "\n"
       << "imaging_matrix = " << (target / "imaging.txt").string() << "\n"
       << "imaging_index = " << (target / "index.txt").string() << "\n"
       << "attributes = " << attributes << "\n";
  write_file(dir.path() / "cohort.conf", conf.str());
  write_file(dir.path() / "config.conf", render_config_file(config));
  write_manifest(parsed.manifest, dir.path());
  dir.commit();
  out << "synthetic cohort of " << cohort.size() << " subjects written to " << target.string() << "\n";
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) {
    sub->add_option("-c,--config", c.config, "sectioned key=value config file");
    sub->add_option("-s,--set", c.set, "override, key=value (repeatable)");
    sub->add_option("--preset", c.preset, "abide or adhd200");
  }
  sub->add_option("-o,--out", c.out, "artifact directory (relative to $MMGT_ARTIFACT_ROOT)");
  sub->add_flag("--force", c.force, "replace an existing artifact directory");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal graph transformer U-Nets for population-graph classification", "mmgt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Common common;

  auto* pretrain = app.add_subcommand("pretrain-vae", "pretrain the non-imaging reconstructor");
  add_common(pretrain, common);
  auto* train = app.add_subcommand("train-cv", "stratified cross-validated training");
  add_common(train, common);
  std::string ablate_kind;
  auto* ablate = app.add_subcommand("ablate", "ablation study over one component");
  add_common(ablate, common);
  ablate->add_option("kind", ablate_kind, "architecture, reconstructor, modality or graph")
      ->required()
      ->check(CLI::IsMember({"architecture", "reconstructor", "modality", "graph"}));
  std::string sweep_axis;
  std::vector<double> grid;
  auto* sweep = app.add_subcommand("sweep", "parameter sweep");
  add_common(sweep, common);
  sweep->add_option("axis", sweep_axis, "embed-dim, pool-ratio or sampling")
      ->required()
      ->check(CLI::IsMember({"embed-dim", "pool-ratio", "sampling"}));
  sweep->add_option("--grid", grid, "comma-separated grid replacing the default")->delimiter(',');
  auto* synth = app.add_subcommand("synth-gen", "write a synthetic cohort in the loadable file layout");
  add_common(synth, common);
  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "render metric tables and bar data from RunReports");
  add_common(report, common, false);
  report->add_option("inputs", report_inputs, "report.json files or run directories")->required();
  auto* show = app.add_subcommand("show-config", "print the resolved configuration");
  add_common(show, common);
  auto* keys = app.add_subcommand("keys", "list configuration keys");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pretrain) return command_pretrain(common, args, out);
    if (*train) return command_train(common, args, out, err);
    if (*ablate) {
      const ParsedConfig parsed = parse_common(common, args);
      return command_variants("ablate-" + ablate_kind, ablation_variants(ablate_kind, parsed.config), common,
                              parsed, out, err);
    }
    if (*sweep) {
      const ParsedConfig parsed = parse_common(common, args);
      return command_variants("sweep-" + sweep_axis, sweep_variants(sweep_axis, parsed.config, grid), common,
                              parsed, out, err);
    }
    if (*synth) return command_synth(common, args, out);
    if (*report) return command_report(common, report_inputs, args, out);
    if (*show) {
      out << render_config_file(parse_common(common, args).config);
      return 0;
    }
    if (*keys) {
      for (const auto& k : config_keys()) out << k.section << "." << k.name << "\t" << k.help << "\n";
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mmgt::cli
