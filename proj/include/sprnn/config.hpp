#pragma once

// Flat `key = value` run configuration shared by every command.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprnn/data.hpp"
#include "sprnn/eval.hpp"
#include "sprnn/model.hpp"
#include "sprnn/training.hpp"

namespace sprnn {

inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
  SynthSpec synth;
  std::size_t synth_test_scenes = 8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  RunConfig();
  // Copies the shared seed/thread settings into the sub-configs and checks them.
  void finalize();
};

struct ConfigKey {
  std::string name;
  std::string group;
  std::string doc;
};

// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();
std::string config_value(const RunConfig& config, const std::string& key);
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

// Overwrites the dataset settings with the profile of a format.
void apply_profile(RunConfig& config, DatasetFormat format);

// `key = value` lines; '#' starts a comment. Unknown keys throw.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin);
// Defaults, then the profile of the chosen format, then the given entries.
RunConfig build_config(const std::map<std::string, std::string>& entries);
std::string serialize_config(const RunConfig& config);
RunConfig config_from_text(const std::string& text);

// Key reference with defaults, for --help.
std::string config_reference();

}  // namespace sprnn
