#pragma once

// Run configuration: the TrainConfig record, the registry of textual keys that
// map onto it, presets, and layered resolution from defaults, preset, a
// sectioned key=value file and command-line overrides.

#include "mmgt/alignment.hpp"
#include "mmgt/amrs.hpp"
#include "mmgt/gt_encoder.hpp"
#include "mmgt/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmgt {

enum class Modality { both, imaging, nonimaging };
enum class AffinitySource { amrs, constant, external };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);
std::string to_string(AffinitySource s);
AffinitySource affinity_source_from_string(const std::string& name);

struct TrainConfig {
  // run
  std::string preset = "abide";
  std::uint64_t seed = 0;
  int n_folds = 10;
  double sampling_ratio = 1.0;
  bool parallel_folds = false;

  // data (paths are empty when the cohort is supplied in-process)
  std::string phenotype_file;
  std::string imaging_dir;
  std::string imaging_matrix;
  std::string imaging_index;
  std::string subject_column = "subject_id";
  std::string label_column = "label";
  std::string label_map;   // raw:code pairs, comma separated; empty reads 0/1
  std::string attributes;  // name:kind[:tolerance], comma separated
  bool drop_missing = false;

  // alignment
  int embed_dim = 500;
  double rfe_step = 0.1;
  ReconstructorVariant reconstructor = ReconstructorVariant::vae;
  int vae_epochs = 3000;
  double vae_learning_rate = 1e-3;
  double vae_weight_decay = 5e-4;
  bool vae_train_only = false;
  std::string vae_checkpoint;

  // graph
  double kernel_sigma = 0.0;  // 0 selects the mean training-pair distance
  double edge_dropout = 0.3;
  double edge_threshold = 0.0;
  AffinitySource affinity_source = AffinitySource::amrs;
  std::string affinity_file;
  double constant_affinity = 0.5;
  int mc_samples = 0;

  // amrs
  BetaCoefficients beta;

  // model
  int hidden_dim = 64;
  int n_heads = 4;
  int depth_imaging = 2;
  int depth_nonimaging = 3;
  double pool_ratio = 0.8;
  Architecture architecture = Architecture::gtunet;
  double dropout = 0.3;
  int head_hidden = 64;

  // objective
  ObjectiveWeights objective = ObjectiveWeights::abide();

  // train
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  int max_epochs = 300;
  int patience = 100;
  Modality modality = Modality::both;

  // synth (cohort generator used when no data files are given)
  int synth_subjects = 200;
  int synth_roi = 40;
  int synth_informative_features = 8;
  double synth_shift = 0.3;
  double synth_noise = 0.2;
  std::string synth_informativeness = "0.8,0,0";  // one binary attribute per entry

  EncoderConfig encoder_config(int depth) const;
  void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

struct ConfigKey {
  std::string section;
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key from text; throws ValidationError on unknown keys and type errors.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Every key rendered as text (round-trips through set_config_value).
ConfigMap config_to_map(const TrainConfig& config);

/// Installs the preset hyperparameters ("abide" or "adhd200").
void apply_preset(TrainConfig& config, const std::string& preset);

/// The resolved configuration in the sectioned file format read_config_file accepts.
std::string render_config_file(const TrainConfig& config);

/// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
/// Keys must belong to the section they appear under.
ConfigMap read_config_file(const std::filesystem::path& path);

/// "key=value" tokens to a map; malformed tokens throw.
ConfigMap parse_overrides(const std::vector<std::string>& tokens);

/// Generator settings from the synth section.
SyntheticSpec synthetic_spec(const TrainConfig& config);

/// defaults < preset < file < overrides, then validate().
TrainConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigMap& overrides);

}  // namespace mmgt
