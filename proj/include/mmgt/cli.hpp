#pragma once

// Command-line front end: configuration resolution with a run manifest,
// cohort loading from the data keys, and the pretrain / train / ablate /
// sweep / synth-gen / report subcommands.

#include "mmgt/config.hpp"
#include "mmgt/data.hpp"
#include "mmgt/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmgt::cli {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kArtifactRootVariable = "MMGT_ARTIFACT_ROOT";

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Digest of every regular file under a directory: sha256 over sorted
/// "relative-path digest" lines.
std::string sha256_directory(const std::filesystem::path& path);

struct RunManifest {
  ConfigMap config;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::vector<std::string> artifacts;                // relative to the artifact directory
  std::vector<std::string> command;
  std::string tool_version = kToolVersion;
  std::string timestamp;  // UTC, ISO 8601

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct ParsedConfig {
  TrainConfig config;
  RunManifest manifest;
};

/// Layered resolution (defaults < preset < file < overrides) plus digests of
/// the config file and every input file the configuration names.
ParsedConfig parse_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

/// Digests of the input files named by a resolved configuration.
std::map<std::string, std::string> input_digests(const TrainConfig& config);

/// "name:categorical" or "name:continuous:tolerance", comma separated.
CohortSchema parse_attribute_schema(const std::string& text);

/// "raw:code" pairs, comma separated; codes must be 0 or 1.
std::map<std::string, int> parse_label_map(const std::string& text);

struct LoadedCohort {
  Cohort cohort;
  std::string cohort_id;  // "synthetic-<seed>" or the phenotype digest prefix
  std::vector<std::string> warnings;
};

/// Reads the files named by the data keys, or generates the synthetic cohort
/// from the synth keys when no phenotype file is configured.
LoadedCohort load_configured_cohort(const TrainConfig& config);

/// Artifact directory for a requested path: absolute paths are kept, relative
/// ones resolve against $MMGT_ARTIFACT_ROOT (or the working directory).
std::filesystem::path resolve_artifact_path(const std::string& requested);

/// Markdown and TSV renderings of one or more reports; a pure function of its inputs.
struct RenderedReport {
  std::map<std::string, std::string> files;  // file name -> content
};

RenderedReport render_reports(const std::vector<RunReport>& reports);

/// Runs one command line (without the program name). Returns the exit status:
/// 0 success, 1 validation error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmgt::cli
