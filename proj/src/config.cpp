#include "mmgt/config.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/matrix_io.hpp"

#include <charconv>
#include <functional>
#include <limits>

namespace mmgt {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::both: return "both";
    case Modality::imaging: return "imaging";
    case Modality::nonimaging: return "nonimaging";
  }
  return "unknown";
}

Modality modality_from_string(const std::string& name) {
  if (name == "both") return Modality::both;
  if (name == "imaging") return Modality::imaging;
  if (name == "nonimaging" || name == "non-imaging") return Modality::nonimaging;
  throw ValidationError("unknown modality '" + name + "' (expected both, imaging or nonimaging)");
}

std::string to_string(AffinitySource s) {
  switch (s) {
    case AffinitySource::amrs: return "amrs";
    case AffinitySource::constant: return "constant";
    case AffinitySource::external: return "external";
  }
  return "unknown";
}

AffinitySource affinity_source_from_string(const std::string& name) {
  if (name == "amrs") return AffinitySource::amrs;
  if (name == "constant") return AffinitySource::constant;
  if (name == "external") return AffinitySource::external;
  throw ValidationError("unknown affinity source '" + name +
                        "' (expected amrs, constant or external)");
}

EncoderConfig TrainConfig::encoder_config(int depth) const {
  EncoderConfig e;
  e.depth = depth;
  e.pool_ratio = pool_ratio;
  e.hidden_dim = hidden_dim;
  e.n_heads = n_heads;
  e.architecture = architecture;
  e.dropout = dropout;
  return e;
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

void TrainConfig::validate() const {
  require(preset == "abide" || preset == "adhd200", "preset must be abide or adhd200");
  require(n_folds >= 3, "n_folds must be >= 3");
  require(sampling_ratio > 0.0 && sampling_ratio <= 1.0, "sampling_ratio must lie in (0,1]");
  require(embed_dim >= 1, "embed_dim must be positive");
  require(rfe_step > 0.0 && rfe_step < 1.0, "rfe_step must lie in (0,1)");
  require(vae_epochs >= 1, "vae_epochs must be >= 1");
  require(vae_learning_rate > 0.0, "vae_learning_rate must be positive");
  require(vae_weight_decay >= 0.0, "vae_weight_decay must be non-negative");
  require(kernel_sigma >= 0.0, "kernel_sigma must be non-negative (0 selects the default)");
  require(edge_dropout >= 0.0 && edge_dropout < 1.0, "edge_dropout must lie in [0,1)");
  require(edge_threshold >= 0.0 && edge_threshold < 1.0, "edge_threshold must lie in [0,1)");
  require(constant_affinity > 0.0 && constant_affinity <= 1.0,
          "constant_affinity must lie in (0,1]");
  require(affinity_source != AffinitySource::external || !affinity_file.empty(),
          "affinity_source=external needs affinity_file");
  require(mc_samples >= 0, "mc_samples must be non-negative");
  validate_betas({beta});
  require(depth_imaging >= 1 && depth_nonimaging >= 1, "encoder depths must be >= 1");
  require(pool_ratio > 0.0 && pool_ratio <= 1.0, "pool_ratio must lie in (0,1]");
  require(hidden_dim >= 1 && n_heads >= 1 && hidden_dim % n_heads == 0,
          "hidden_dim must be a positive multiple of n_heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
  require(head_hidden >= 1, "head_hidden must be positive");
  require(objective.lambda >= 0.0 && objective.mu >= 0.0 && objective.eta >= 0.0,
          "lambda, mu and eta must be non-negative");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(max_epochs >= 0, "max_epochs must be non-negative");
  require(patience >= 1, "patience must be >= 1");
  require(max_epochs == 0 || patience <= max_epochs, "patience must not exceed max_epochs");
  require(synth_subjects >= 4, "synth_subjects must be >= 4");
  require(synth_roi >= 2, "synth_roi must be >= 2");
  require(synth_noise >= 0.0, "synth_noise must be non-negative");
  synthetic_spec(*this);
}

SyntheticSpec synthetic_spec(const TrainConfig& config) {
  SyntheticSpec spec;
  spec.n_subjects = config.synth_subjects;
  spec.n_roi = config.synth_roi;
  spec.n_informative_features = config.synth_informative_features;
  spec.imaging_shift = config.synth_shift;
  spec.imaging_noise = config.synth_noise;
  const auto values = io::split(config.synth_informativeness, ',');
  const SyntheticSpec named = default_synthetic_spec(0.0);
  for (std::size_t k = 0; k < values.size(); ++k) {
    SyntheticAttribute attr;
    attr.name = k < named.attributes.size() ? named.attributes[k].name : "attr" + std::to_string(k);
    attr.kind = AttributeKind::categorical;
    attr.n_categories = 2;
    const std::string t = io::trim(values[k]);
    double v = 0.0;
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("synth_informativeness entries must be numbers in [0,1], got '" + t + "'");
    }
    attr.informativeness = v;
    spec.attributes.push_back(attr);
  }
  if (spec.attributes.empty()) throw ValidationError("synth_informativeness needs at least one entry");
  const int d1 = spec.n_roi * (spec.n_roi - 1) / 2;
  if (spec.n_informative_features < 0 || spec.n_informative_features > d1) {
    throw ValidationError("synth_informative_features must lie in [0, n_roi(n_roi-1)/2]");
  }
  return spec;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = io::trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ValidationError("config key '" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string t = io::trim(text);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ValidationError("config key '" + key + "' expects an integer, got '" + text + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  const long long v = parse_integer(key, text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ValidationError("config key '" + key + "' is out of range");
  }
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = io::trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ValidationError("config key '" + key + "' expects a boolean, got '" + text + "'");
}

struct Entry {
  ConfigKey key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Entry number_entry(std::string section, std::string name, std::string help, T TrainConfig::*field) {
  Entry e{{std::move(section), name, std::move(help)}, {}, {}};
  e.set = [field, name](TrainConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, double>) {
      c.*field = parse_double(name, v);
    } else if constexpr (std::is_same_v<T, int>) {
      c.*field = parse_int(name, v);
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*field = parse_bool(name, v);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      const long long raw = parse_integer(name, v);
      if (raw < 0) throw ValidationError("config key '" + name + "' must be non-negative");
      c.*field = static_cast<std::uint64_t>(raw);
    } else {
      c.*field = io::trim(v);
    }
  };
  e.get = [field](const TrainConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*field);
    } else if constexpr (std::is_same_v<T, bool>) {
      return c.*field ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return c.*field;
    } else {
      return std::to_string(c.*field);
    }
  };
  return e;
}

Entry custom_entry(std::string section, std::string name, std::string help,
                   std::function<void(TrainConfig&, const std::string&)> set,
                   std::function<std::string(const TrainConfig&)> get) {
  return {{std::move(section), std::move(name), std::move(help)}, std::move(set), std::move(get)};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    using C = TrainConfig;
    std::vector<Entry> r;
    r.push_back(custom_entry(
        "run", "preset", "hyperparameter preset: abide or adhd200",
        [](C& c, const std::string& v) { c.preset = io::trim(v); },
        [](const C& c) { return c.preset; }));
    r.push_back(number_entry("run", "seed", "base random seed", &C::seed));
    r.push_back(number_entry("run", "n_folds", "cross-validation folds", &C::n_folds));
    r.push_back(number_entry("run", "sampling_ratio", "stratified subsample before folding",
                             &C::sampling_ratio));
    r.push_back(number_entry("run", "parallel_folds", "train folds concurrently", &C::parallel_folds));

    r.push_back(number_entry("data", "phenotype_file", "phenotype table", &C::phenotype_file));
    r.push_back(number_entry("data", "imaging_dir", "directory of per-subject matrices",
                             &C::imaging_dir));
    r.push_back(number_entry("data", "imaging_matrix", "stacked N x d1 imaging matrix",
                             &C::imaging_matrix));
    r.push_back(number_entry("data", "imaging_index", "subject ids for imaging_matrix rows",
                             &C::imaging_index));
    r.push_back(number_entry("data", "subject_column", "subject id column", &C::subject_column));
    r.push_back(number_entry("data", "label_column", "label column", &C::label_column));
    r.push_back(number_entry("data", "label_map", "raw:code label pairs, e.g. 1:1,2:0 (empty = 0/1)",
                             &C::label_map));
    r.push_back(number_entry("data", "attributes",
                             "name:categorical or name:continuous:tolerance, comma separated",
                             &C::attributes));
    r.push_back(number_entry("data", "drop_missing", "drop subjects with missing values",
                             &C::drop_missing));

    r.push_back(number_entry("alignment", "embed_dim", "common dimension d", &C::embed_dim));
    r.push_back(number_entry("alignment", "rfe_step", "fraction eliminated per RFE round",
                             &C::rfe_step));
    r.push_back(custom_entry(
        "alignment", "reconstructor", "vae, ae, mlp or none",
        [](C& c, const std::string& v) { c.reconstructor = reconstructor_variant_from_string(io::trim(v)); },
        [](const C& c) { return std::string(to_string(c.reconstructor)); }));
    r.push_back(number_entry("alignment", "vae_epochs", "reconstructor pretraining epochs",
                             &C::vae_epochs));
    r.push_back(number_entry("alignment", "vae_learning_rate", "reconstructor learning rate",
                             &C::vae_learning_rate));
    r.push_back(number_entry("alignment", "vae_weight_decay", "reconstructor weight decay",
                             &C::vae_weight_decay));
    r.push_back(number_entry("alignment", "vae_train_only",
                             "pretrain the reconstructor on training rows of each fold only",
                             &C::vae_train_only));
    r.push_back(number_entry("alignment", "vae_checkpoint", "pretrained reconstructor to load",
                             &C::vae_checkpoint));

    r.push_back(number_entry("graph", "kernel_sigma", "kernel width; 0 = mean training distance",
                             &C::kernel_sigma));
    r.push_back(number_entry("graph", "edge_dropout", "training edge dropout rate", &C::edge_dropout));
    r.push_back(number_entry("graph", "edge_threshold", "drop edges below this weight (0 = dense)",
                             &C::edge_threshold));
    r.push_back(custom_entry(
        "graph", "affinity_source", "amrs, constant or external",
        [](C& c, const std::string& v) { c.affinity_source = affinity_source_from_string(io::trim(v)); },
        [](const C& c) { return to_string(c.affinity_source); }));
    r.push_back(number_entry("graph", "affinity_file", "N x N affinity for affinity_source=external",
                             &C::affinity_file));
    r.push_back(number_entry("graph", "constant_affinity", "C value for affinity_source=constant",
                             &C::constant_affinity));
    r.push_back(number_entry("graph", "mc_samples",
                             "average predictions over this many dropout graphs (0 = full graph)",
                             &C::mc_samples));

    r.push_back(custom_entry(
        "amrs", "beta_reward", "reward coefficient",
        [](C& c, const std::string& v) { c.beta.reward = parse_double("beta_reward", v); },
        [](const C& c) { return format_double(c.beta.reward); }));
    r.push_back(custom_entry(
        "amrs", "beta_penalty", "penalty coefficient",
        [](C& c, const std::string& v) { c.beta.penalty = parse_double("beta_penalty", v); },
        [](const C& c) { return format_double(c.beta.penalty); }));
    r.push_back(custom_entry(
        "amrs", "beta_motivation", "motivation coefficient",
        [](C& c, const std::string& v) { c.beta.motivation = parse_double("beta_motivation", v); },
        [](const C& c) { return format_double(c.beta.motivation); }));

    r.push_back(number_entry("model", "hidden_dim", "GT hidden width", &C::hidden_dim));
    r.push_back(number_entry("model", "n_heads", "attention heads", &C::n_heads));
    r.push_back(number_entry("model", "depth_imaging", "pool levels, imaging channel",
                             &C::depth_imaging));
    r.push_back(number_entry("model", "depth_nonimaging", "pool levels, non-imaging channel",
                             &C::depth_nonimaging));
    r.push_back(number_entry("model", "pool_ratio", "gPool retention ratio", &C::pool_ratio));
    r.push_back(custom_entry(
        "model", "architecture", "gtunet, stacking, residual or cascade",
        [](C& c, const std::string& v) { c.architecture = architecture_from_string(io::trim(v)); },
        [](const C& c) { return to_string(c.architecture); }));
    r.push_back(number_entry("model", "dropout", "feature dropout on the encoder input", &C::dropout));
    r.push_back(number_entry("model", "head_hidden", "classifier hidden width", &C::head_hidden));

    r.push_back(custom_entry(
        "objective", "lambda", "smoothness weight",
        [](C& c, const std::string& v) { c.objective.lambda = parse_double("lambda", v); },
        [](const C& c) { return format_double(c.objective.lambda); }));
    r.push_back(custom_entry(
        "objective", "mu", "degree weight",
        [](C& c, const std::string& v) { c.objective.mu = parse_double("mu", v); },
        [](const C& c) { return format_double(c.objective.mu); }));
    r.push_back(custom_entry(
        "objective", "eta", "reward weight",
        [](C& c, const std::string& v) { c.objective.eta = parse_double("eta", v); },
        [](const C& c) { return format_double(c.objective.eta); }));

    r.push_back(number_entry("train", "learning_rate", "Adam learning rate", &C::learning_rate));
    r.push_back(number_entry("train", "weight_decay", "decoupled weight decay", &C::weight_decay));
    r.push_back(number_entry("train", "max_epochs", "epoch budget per fold", &C::max_epochs));
    r.push_back(number_entry("train", "patience", "early-stopping patience", &C::patience));
    r.push_back(custom_entry(
        "train", "modality", "both, imaging or nonimaging",
        [](C& c, const std::string& v) { c.modality = modality_from_string(io::trim(v)); },
        [](const C& c) { return to_string(c.modality); }));

    r.push_back(number_entry("synth", "synth_subjects", "generated cohort size", &C::synth_subjects));
    r.push_back(number_entry("synth", "synth_roi", "generated ROI count", &C::synth_roi));
    r.push_back(number_entry("synth", "synth_informative_features",
                             "FC entries carrying the class shift", &C::synth_informative_features));
    r.push_back(number_entry("synth", "synth_shift", "class mean difference on informative entries",
                             &C::synth_shift));
    r.push_back(number_entry("synth", "synth_noise", "per-entry noise standard deviation",
                             &C::synth_noise));
    r.push_back(number_entry("synth", "synth_informativeness",
                             "attribute informativeness values, comma separated",
                             &C::synth_informativeness));
    return r;
  }();
  return entries;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key.name == key) return e;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : registry()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  find_entry(key).set(config, value);
}

ConfigMap config_to_map(const TrainConfig& config) {
  ConfigMap out;
  for (const auto& e : registry()) out[e.key.name] = e.get(config);
  return out;
}

void apply_preset(TrainConfig& config, const std::string& preset) {
  if (preset == "abide") {
    config.objective = ObjectiveWeights::abide();
  } else if (preset == "adhd200") {
    config.objective = ObjectiveWeights::adhd200();
  } else {
    throw ValidationError("unknown preset '" + preset + "' (expected abide or adhd200)");
  }
  config.preset = preset;
  config.embed_dim = 500;
  config.depth_imaging = 2;
  config.depth_nonimaging = 3;
  config.pool_ratio = 0.8;
  config.learning_rate = 1e-4;
  config.weight_decay = 5e-4;
  config.max_epochs = 300;
  config.patience = 100;
  config.dropout = 0.3;
  config.edge_dropout = 0.3;
}

std::string render_config_file(const TrainConfig& config) {
  std::string out;
  std::string section;
  for (const auto& e : registry()) {
    if (e.key.section != section) {
      section = e.key.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += e.key.name + " = " + e.get(config) + "\n";
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  ConfigMap out;
  std::string section;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string line = lines[n];
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n + 1);
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + ": malformed section header");
      section = io::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : config_keys()) known = known || k.section == section;
      if (!known) throw ValidationError(where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const std::string key = io::trim(line.substr(0, eq));
    const std::string value = io::trim(line.substr(eq + 1));
    const Entry& e = find_entry(key);
    if (!section.empty() && e.key.section != section) {
      throw ValidationError(where + ": key '" + key + "' belongs to section [" + e.key.section +
                            "], not [" + section + "]");
    }
    if (out.count(key)) throw ValidationError(where + ": key '" + key + "' set twice");
    out[key] = value;
  }
  return out;
}

ConfigMap parse_overrides(const std::vector<std::string>& tokens) {
  ConfigMap out;
  for (const auto& t : tokens) {
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("override '" + t + "' is not of the form key=value");
    }
    std::string key = io::trim(t.substr(0, eq));
    // Accept section-qualified keys such as model.pool_ratio.
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      const std::string section = key.substr(0, dot);
      key = key.substr(dot + 1);
      if (find_entry(key).key.section != section) {
        throw ValidationError("key '" + key + "' does not belong to section '" + section + "'");
      }
    }
    find_entry(key);
    out[key] = t.substr(eq + 1);
  }
  return out;
}

TrainConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigMap& overrides) {
  ConfigMap from_file;
  if (file) from_file = read_config_file(*file);
  std::string preset = "abide";
  if (auto it = from_file.find("preset"); it != from_file.end()) preset = io::trim(it->second);
  if (auto it = overrides.find("preset"); it != overrides.end()) preset = io::trim(it->second);

  TrainConfig config;
  apply_preset(config, preset);
  for (const auto& [k, v] : from_file) {
    if (k != "preset") set_config_value(config, k, v);
  }
  for (const auto& [k, v] : overrides) {
    if (k != "preset") set_config_value(config, k, v);
  }
  config.validate();
  return config;
}

}  // namespace mmgt
