#pragma once

// End-to-end steps shared by the command-line tool and the Python module.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sprnn/config.hpp"

namespace sprnn {

struct TrainingData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::string units;
};

// Scenes from `data_dir`, or generated from the synth keys when no directory
// is given and the format is synth. File datasets set config.model D.
std::vector<Scene> load_scenes(RunConfig& config, const std::optional<std::filesystem::path>& data_dir, bool held_out);

TrainingData prepare_training_data(RunConfig& config, const std::optional<std::filesystem::path>& data_dir);
std::vector<Sample> prepare_test_data(RunConfig& config, const std::optional<std::filesystem::path>& data_dir);

struct TrainedModel {
  std::unique_ptr<SocialPatteRNN> model;
  FitResult fit;
};

TrainedModel train_model(const RunConfig& config, const TrainingData& data,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

std::string loss_log_header();
std::string loss_log_row(const EpochLog& log);

struct AblationRow {
  AblationMode mode = AblationMode::vrnn;
  std::size_t parameters = 0;
  std::vector<MetricsReport> per_seed;
  double mean_min_ade = 0.0;
  double mean_min_fde = 0.0;
};

// Trains and evaluates all four modes with shared seeds seed, seed+1, ...
std::vector<AblationRow> run_ablation(const RunConfig& config, const std::optional<std::filesystem::path>& data_dir,
                                      std::size_t seeds, std::ostream* progress = nullptr);

// Tiny fixed-size model and 2-agent fixture for gradient checking.
struct GradcheckSetup {
  ModelConfig model;
  std::vector<Sample> samples;
};
GradcheckSetup gradcheck_setup(AblationMode mode, std::uint64_t seed);
// Model-level check: Richardson central differences at step 1e-3 keep the
// roundoff floor well below the tolerance for gradients down to ~1e-9.
inline constexpr double kGradcheckEps = 1e-3;
GradCheckResult run_gradcheck(AblationMode mode, std::uint64_t seed, double eps = kGradcheckEps,
                              FdScheme scheme = FdScheme::richardson);

}  // namespace sprnn
