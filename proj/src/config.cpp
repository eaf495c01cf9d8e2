#include "sprnn/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>

namespace sprnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest text that reads back exactly.
  for (int precision = 1; precision <= 17; ++precision) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Entry {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_KEY(NAME, GROUP, DOC, FIELD)                                                       \
  Entry {                                                                                       \
    {NAME, GROUP, DOC}, [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.FIELD)); }, \
        [](RunConfig& c, const std::string& v) { c.FIELD = to_size(NAME, v); }                  \
  }
#define DOUBLE_KEY(NAME, GROUP, DOC, FIELD)                                            \
  Entry {                                                                              \
    {NAME, GROUP, DOC}, [](const RunConfig& c) { return fmt(c.FIELD); },               \
        [](RunConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); }       \
  }
#define BOOL_KEY(NAME, GROUP, DOC, FIELD)                                              \
  Entry {                                                                              \
    {NAME, GROUP, DOC}, [](const RunConfig& c) { return fmt(c.FIELD); },               \
        [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(NAME, v); }         \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      // data
      Entry{{"dataset_format", "data", "trajair, sdd, nba or synth; selects the default profile"},
            [](const RunConfig& c) { return to_string(c.data.format); },
            [](RunConfig& c, const std::string& v) { c.data.format = parse_dataset_format(v); }},
      SIZE_KEY("H", "data", "observed history steps", data.H),
      SIZE_KEY("F", "data", "predicted future steps", data.F),
      Entry{{"P", "data", "motion pattern length"},
            [](const RunConfig& c) { return fmt(c.data.P); },
            [](RunConfig& c, const std::string& v) { c.data.P = c.model.context.P = to_size("P", v); }},
      SIZE_KEY("stride", "data", "window stride in steps; 0 means H+F", data.stride),
      SIZE_KEY("min_agents", "data", "drop scenes without this many agents present over a window", data.min_agents),
      SIZE_KEY("downsample", "data", "keep every n-th frame", data.downsample),
      DOUBLE_KEY("units_scale", "data", "multiplier applied to raw coordinates", data.units_scale),
      DOUBLE_KEY("val_fraction", "data", "fraction of training samples held out for early stopping", data.val_fraction),
      // model
      Entry{{"ablation", "model", "vrnn, pat, pat_soc or pat_soc_att"},
            [](const RunConfig& c) { return to_string(c.model.context.mode); },
            [](RunConfig& c, const std::string& v) { c.model.context.mode = parse_ablation(v); }},
      Entry{{"D", "model", "coordinate dimension (2 or 3); file datasets override it"},
            [](const RunConfig& c) { return fmt(c.model.backbone.D); },
            [](RunConfig& c, const std::string& v) {
              c.model.backbone.D = c.model.context.D = c.synth.dims = to_size("D", v);
            }},
      SIZE_KEY("d_x", "model", "location feature width", model.backbone.d_x),
      SIZE_KEY("d_z", "model", "latent width", model.backbone.d_z),
      Entry{{"d_h", "model", "recurrent state width"},
            [](const RunConfig& c) { return fmt(c.model.backbone.d_h); },
            [](RunConfig& c, const std::string& v) { c.model.backbone.d_h = c.model.context.d_h = to_size("d_h", v); }},
      SIZE_KEY("d_p", "model", "pattern feature width", model.context.d_p),
      SIZE_KEY("d_s", "model", "social feature width", model.context.d_s),
      SIZE_KEY("heads", "model", "attention heads; must divide d_s", model.context.heads),
      Entry{{"mlp_depth", "model", "linear layers per feature network"},
            [](const RunConfig& c) { return fmt(c.model.backbone.mlp_depth); },
            [](RunConfig& c, const std::string& v) {
              c.model.backbone.mlp_depth = c.model.context.mlp_depth = to_size("mlp_depth", v);
            }},
      Entry{{"mlp_hidden", "model", "hidden width of feature networks"},
            [](const RunConfig& c) { return fmt(c.model.backbone.mlp_hidden); },
            [](RunConfig& c, const std::string& v) {
              c.model.backbone.mlp_hidden = c.model.context.mlp_hidden = to_size("mlp_hidden", v);
            }},
      DOUBLE_KEY("logvar_clamp", "model", "log-variance outputs are clamped to [-c, c]", model.backbone.logvar_clamp),
      BOOL_KEY("rnn_context", "model", "feed the context into the recurrent update", model.backbone.rnn_context),
      BOOL_KEY("prior_context", "model", "condition the prior on the context", model.backbone.prior_context),
      SIZE_KEY("influence_lag", "model", "social influences from the previous step (1) or the current one (0)",
               model.influence_lag),
      BOOL_KEY("train_predicted_patterns", "model", "feed predicted instead of true patterns while training",
               model.train_predicted_patterns),
      BOOL_KEY("warmup_teacher_patterns", "model", "use true patterns during history warm-up",
               model.warmup_teacher_patterns),
      Entry{{"train_horizon", "model", "history or full: steps covered by the training loss"},
            [](const RunConfig& c) { return to_string(c.model.train_horizon); },
            [](RunConfig& c, const std::string& v) { c.model.train_horizon = parse_train_horizon(v); }},
      // training
      DOUBLE_KEY("lr", "train", "Adam learning rate", train.lr),
      SIZE_KEY("max_epochs", "train", "epoch limit", train.max_epochs),
      SIZE_KEY("batch_size", "train", "samples (whole scene windows) per step", train.batch_size),
      DOUBLE_KEY("clip_norm", "train", "global gradient norm limit", train.clip_norm),
      SIZE_KEY("patience", "train", "epochs without validation improvement before stopping", train.patience),
      DOUBLE_KEY("kl_weight", "train", "weight of the KL term", train.weights.kl_weight),
      DOUBLE_KEY("pattern_weight", "train", "weight of the pattern loss", train.weights.pattern_weight),
      SIZE_KEY("kl_warmup_epochs", "train", "epochs of linear KL weight ramp; 0 disables", train.kl_warmup_epochs),
      // evaluation
      SIZE_KEY("k", "eval", "samples per agent-window for best-of-K metrics", eval.K),
      BOOL_KEY("joint_best", "eval", "report the FDE of the best-ADE sample", eval.joint_best),
      DOUBLE_KEY("noise_scale", "eval", "latent noise multiplier at inference", eval.noise_scale),
      // run
      Entry{{"seed", "run", "seed for initialisation, shuffling, sampling and synthetic data"},
            [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      SIZE_KEY("threads", "run", "worker threads for data loading and evaluation", threads),
      // synthetic generator
      SIZE_KEY("synth_scenes", "synth", "generated training scenes", synth.scenes),
      SIZE_KEY("synth_test_scenes", "synth", "generated held-out scenes", synth_test_scenes),
      SIZE_KEY("synth_agents", "synth", "agents per scene", synth.agents),
      SIZE_KEY("synth_length", "synth", "steps per scene", synth.length),
      Entry{{"synth_rule", "synth", "straight, circuit or weave"},
            [](const RunConfig& c) { return to_string(c.synth.rule); },
            [](RunConfig& c, const std::string& v) { c.synth.rule = parse_pattern_rule(v); }},
      DOUBLE_KEY("synth_speed_min", "synth", "lowest agent speed", synth.speed_min),
      DOUBLE_KEY("synth_speed_max", "synth", "highest agent speed", synth.speed_max),
      DOUBLE_KEY("synth_heading_noise", "synth", "std-dev of per-step heading noise (radians)", synth.heading_noise),
      DOUBLE_KEY("synth_repulsion_radius", "synth", "pairwise repulsion radius", synth.repulsion_radius),
      DOUBLE_KEY("synth_repulsion_strength", "synth", "pairwise repulsion strength; 0 disables", synth.repulsion_strength),
      DOUBLE_KEY("synth_arena", "synth", "half-width of the start area", synth.arena),
      SIZE_KEY("synth_circuit_long", "synth", "circuit steps along the long side", synth.circuit_long),
      SIZE_KEY("synth_circuit_short", "synth", "circuit steps along the short side", synth.circuit_short),
      DOUBLE_KEY("synth_weave_amplitude", "synth", "weave heading amplitude (radians)", synth.weave_amplitude),
      SIZE_KEY("synth_weave_period", "synth", "weave period in steps", synth.weave_period),
      BOOL_KEY("synth_head_on", "synth", "two agents approaching each other on a line", synth.head_on),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

const Entry& find(const std::string& key) {
  for (const auto& e : entries())
    if (e.key.name == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  model.context.P = data.P;
  model.context.D = model.backbone.D;
  model.context.d_h = model.backbone.d_h;
  model.context.mlp_depth = model.backbone.mlp_depth;
  model.context.mlp_hidden = model.backbone.mlp_hidden;
  synth.dims = model.backbone.D;
}

void RunConfig::finalize() {
  model.context.P = data.P;
  model.context.D = model.backbone.D;
  synth.dims = model.backbone.D;
  model.backbone.d_c = model.context.d_c();
  train.seed = seed;
  eval.seed = seed;
  eval.threads = threads;
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (eval.K < 1) throw ConfigError("k must be >= 1");
  if (!(train.lr > 0.0)) throw ConfigError("lr must be > 0");
  try {
    data.validate();
    model.validate();
    train.validate();
    if (data.format == DatasetFormat::synth) synth.validate();
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

std::string config_value(const RunConfig& config, const std::string& key) { return find(key).get(config); }

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  try {
    find(key).set(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void apply_profile(RunConfig& config, DatasetFormat format) {
  auto& d = config.data;
  d.format = format;
  switch (format) {
    case DatasetFormat::sdd:
      d.H = 8, d.F = 12, d.P = 6, d.downsample = 1, d.min_agents = 1;
      break;
    case DatasetFormat::nba:
      d.H = 10, d.F = 40, d.P = 8, d.downsample = 1, d.min_agents = 1;
      break;
    case DatasetFormat::trajair:
      d.H = 8, d.F = 20, d.P = 4, d.downsample = 5, d.min_agents = 4;
      config.model.backbone.D = 3;
      break;
    case DatasetFormat::synth:
      d.H = 8, d.F = 12, d.P = 6, d.downsample = 1, d.min_agents = 1;
      break;
  }
  config.model.context.P = d.P;
  config.model.context.D = config.model.backbone.D;
  config.synth.dims = config.model.backbone.D;
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& k : config_keys()) known = known || k.name == key;
    if (!known) throw ConfigError(where + ": unknown config key '" + key + "'");
    if (out.count(key)) throw ConfigError(where + ": key '" + key + "' given twice");
    out[key] = value;
  }
  return out;
}

RunConfig build_config(const std::map<std::string, std::string>& entries) {
  RunConfig config;
  DatasetFormat format = config.data.format;
  if (auto it = entries.find("dataset_format"); it != entries.end()) {
    try {
      format = parse_dataset_format(it->second);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  apply_profile(config, format);
  for (const auto& [key, value] : entries) set_config_value(config, key, value);
  config.finalize();
  return config;
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key.name + " = " + e.get(config) + "\n";
  return out;
}

RunConfig config_from_text(const std::string& text) { return build_config(parse_config_text(text, "<config>")); }

std::string config_reference() {
  RunConfig defaults;
  std::ostringstream out;
  out << "Config keys (flat 'key = value', '#' comments). Defaults shown are for the synth profile;\n"
         "dataset_format = sdd|nba|trajair first applies that dataset's profile.\n";
  std::string group;
  for (const auto& e : entries()) {
    if (e.key.group != group) {
      group = e.key.group;
      out << "\n[" << group << "]\n";
    }
    std::string name = e.key.name + " = " + e.get(defaults);
    if (name.size() < 34) name.resize(34, ' ');
    out << "  " << name << " " << e.key.doc << "\n";
  }
  out << "\nProfiles: sdd H=8 F=12 P=6; nba H=10 F=40 P=8; trajair downsample=5 H=8 F=20 P=4 min_agents=4 D=3.\n";
  return out.str();
}

}  // namespace sprnn
