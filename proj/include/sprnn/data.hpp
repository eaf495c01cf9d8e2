#pragma once

// Trajectory datasets: CSV loading, relative displacements, windowing into
// history/future samples, ground-truth motion patterns, scene filtering and a
// synthetic multi-agent generator with known motion rules.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sprnn/matrix.hpp"

namespace sprnn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetFormat { trajair, sdd, nba, synth };

std::string to_string(DatasetFormat format);
DatasetFormat parse_dataset_format(const std::string& text);
// Coordinate unit label of each dataset (km, m, ft; synthetic data is unitless).
std::string units_label(DatasetFormat format);

struct DatasetConfig {
  DatasetFormat format = DatasetFormat::synth;
  std::size_t H = 8;
  std::size_t F = 12;
  std::size_t P = 6;
  std::size_t stride = 0;  // 0 means H + F
  std::size_t min_agents = 1;
  std::size_t downsample = 1;
  double units_scale = 1.0;
  double val_fraction = 0.1;

  std::size_t window() const { return H + F; }
  std::size_t effective_stride() const { return stride == 0 ? window() : stride; }
  void validate() const;
};

struct RawTrack {
  std::string agent_id;
  std::vector<std::int64_t> frames;
  Matrix positions;  // frames.size() x D
};

struct SceneAgent {
  std::string id;
  Matrix positions;           // T x D; absent steps hold the nearest observed position
  std::vector<bool> present;  // T
};

// Ground truth of the generator that produced a synthetic scene.
struct SceneOracle {
  std::string rule;
  std::vector<double> speed;    // per agent
  std::vector<double> heading;  // per agent, radians (straight/weave base heading)
};

struct Scene {
  std::string scene_id;
  std::size_t T = 0;
  std::size_t D = 0;
  std::vector<std::int64_t> frames;
  std::vector<SceneAgent> agents;
  std::optional<SceneOracle> oracle;

  std::size_t present_count(std::size_t t) const;
};

// One H+F window of a scene. Displacements are relative steps with the
// first step of every window fixed to zero, so that
// abs[t] = start_abs + sum_{s <= t} displacements[s].
struct Sample {
  std::string scene_id;
  std::size_t window = 0;  // start step in the scene
  std::size_t H = 0, F = 0, P = 0, D = 0;
  std::vector<std::string> agent_ids;
  Matrix start_abs;                          // N x D
  std::vector<Matrix> displacements;         // per agent (H+F) x D
  std::vector<Matrix> gt_patterns;           // per agent (H+F) x (P*D)
  std::vector<std::vector<bool>> present;    // per agent, per step
  std::vector<bool> complete;                // agent present over the whole window

  std::size_t agents() const { return agent_ids.size(); }
  std::size_t steps() const { return H + F; }
  Matrix history(std::size_t agent) const;
  Matrix future(std::size_t agent) const;
  // Absolute positions of the agent over the window, (H+F) x D.
  Matrix absolute(std::size_t agent) const;
};

// Reads every *.csv file under `path` (or the single file `path`).
std::vector<Scene> load_dataset(const std::filesystem::path& path, const DatasetConfig& config,
                                std::size_t threads = 1);
std::vector<Scene> parse_trajectory_csv(const std::string& text, const std::string& origin,
                                        const DatasetConfig& config);
void write_trajectory_csv(const std::filesystem::path& file, const std::vector<Scene>& scenes);

struct RelativeTrack {
  std::vector<double> start_abs;  // D
  Matrix displacements;           // (T-1) x D
};

RelativeTrack to_relative(const Matrix& abs_positions);
Matrix from_relative(const std::vector<double>& start_abs, const Matrix& displacements);

// Pattern of P displacements starting at the 1-based step t; when fewer than
// P remain, the last displacement is repeated.
Matrix extract_pattern(const Matrix& displacements, std::size_t t, std::size_t P);

std::vector<Sample> make_samples(const Scene& scene, const DatasetConfig& config);
std::vector<Sample> make_samples(const std::vector<Scene>& scenes, const DatasetConfig& config);

// Keeps scenes where at least n agents are present over some full window of
// `window` steps. Order is preserved.
std::vector<Scene> filter_min_agents(const std::vector<Scene>& scenes, std::size_t n, std::size_t window = 1);

// Deterministic shuffled train/validation split at the sample level.
std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(std::vector<Sample> samples,
                                                                  double val_fraction, std::uint64_t seed);

enum class PatternRule { straight, circuit, weave };
std::string to_string(PatternRule rule);
PatternRule parse_pattern_rule(const std::string& text);

struct SynthSpec {
  std::size_t dims = 2;
  std::size_t scenes = 8;
  std::size_t agents = 4;
  std::size_t length = 20;
  PatternRule rule = PatternRule::circuit;
  double speed_min = 0.8;
  double speed_max = 1.2;
  double heading_noise = 0.0;
  double repulsion_radius = 1.5;
  double repulsion_strength = 0.0;
  double arena = 8.0;
  std::size_t circuit_long = 6;   // steps along the long side
  std::size_t circuit_short = 3;  // steps along the short side
  double weave_amplitude = 0.5;   // radians
  std::size_t weave_period = 8;
  bool head_on = false;           // two agents approaching each other on a line

  void validate() const;
  std::map<std::string, std::string> describe() const;
};

std::vector<Scene> synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace sprnn
