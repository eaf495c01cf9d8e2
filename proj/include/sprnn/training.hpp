#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprnn/model.hpp"

namespace sprnn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t max_epochs = 1000;
  std::size_t batch_size = 32;  // samples (whole scenes) per step
  double clip_norm = 10.0;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  LossWeights weights;
  std::size_t kl_warmup_epochs = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of every parameter from its gradient.
void adam_step(ParameterStore& params, AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

// KL weight in effect for a (0-based) epoch under linear warm-up.
double kl_weight_for_epoch(const TrainConfig& config, std::size_t epoch);

LossBreakdown train_epoch(SocialPatteRNN& model, std::span<const Sample> samples, const TrainConfig& config,
                          AdamState& state, std::size_t epoch);

// Mean loss of a teacher-forced pass with fixed noise; no parameter changes.
LossBreakdown evaluate_loss(const SocialPatteRNN& model, std::span<const Sample> samples, const TrainConfig& config);

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 0-based index into the history
  double best = std::numeric_limits<double>::infinity();
};

// Stops once `patience` epochs have passed without a strict improvement.
EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;
  bool has_val = false;
  double kl_weight = 1.0;
};

struct FitResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 1-based
  double best_metric = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  AdamState adam;
};

// Trains with early stopping on the validation total (training total when
// there is no validation data) and leaves the best parameters in the model.
FitResult fit(SocialPatteRNN& model, std::span<const Sample> train, std::span<const Sample> val,
              const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'R', 'N', 'N', 'C', 'K', 'P'};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::string config_text;
  std::uint64_t epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  std::uint64_t adam_step = 0;
  std::map<std::string, StoredTensor> params;
  std::map<std::string, StoredTensor> adam_m;
  std::map<std::string, StoredTensor> adam_v;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Checkpoint make_checkpoint(const SocialPatteRNN& model, const AdamState* adam, std::string config_text,
                           std::uint64_t epoch, double best_metric);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies stored parameters into the model; names and shapes must match exactly.
void load_parameters(SocialPatteRNN& model, const Checkpoint& checkpoint);
AdamState adam_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace sprnn
