#pragma once

// The full trajectory model: the recurrent backbone conditioned on pattern
// and social context, run teacher-forced for training and autoregressively
// for prediction.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sprnn/backbone.hpp"
#include "sprnn/context.hpp"
#include "sprnn/data.hpp"
#include "sprnn/objective.hpp"

namespace sprnn {

enum class TrainHorizon { history, full };
std::string to_string(TrainHorizon horizon);
TrainHorizon parse_train_horizon(const std::string& text);

struct ModelConfig {
  BackboneConfig backbone;
  ContextConfig context;
  std::size_t influence_lag = 1;          // social influences from the previous step (1) or the current one (0)
  bool train_predicted_patterns = true;  // false feeds ground-truth patterns (teacher forcing) while training
  bool warmup_teacher_patterns = false;   // use ground-truth patterns during history warm-up
  TrainHorizon train_horizon = TrainHorizon::full;

  AblationMode mode() const { return context.mode; }
  void validate() const;
};

// Rows of several samples (optionally replicated) stacked for one pass.
struct Batch {
  std::size_t rows = 0;
  std::size_t D = 0, P = 0, H = 0, F = 0;
  std::vector<const Sample*> samples;
  std::vector<std::size_t> row_sample;  // index into samples
  std::vector<std::size_t> row_agent;   // agent index within its sample
  std::vector<std::size_t> row_copy;    // replica index
  SocialLayout layout;
  std::vector<Tensor> displacement;     // per step [rows, D]
  std::vector<Tensor> position_before;  // per step [rows, D], position before the step's displacement
  std::vector<Tensor> gt_pattern;       // per step [rows, P*D]
  std::vector<std::vector<bool>> present;  // per step, per row
  std::vector<double> loss_mask;        // per row: agent complete over the window

  std::size_t steps() const { return H + F; }
};

// Stacks `copies` replicas of each sample; replicas form separate scenes.
Batch make_batch(std::span<const Sample* const> samples, std::size_t copies = 1);

// Standard-normal draws per step: either one sequential stream or one stream
// per row (so a row's draws do not depend on the batch composition).
class NoiseStreams {
 public:
  static NoiseStreams sequential(std::uint64_t seed);
  static NoiseStreams per_row(std::vector<std::uint64_t> seeds);
  static NoiseStreams zeros();

  // Multiplies every draw; 0 collapses sampling to the distribution means.
  void set_scale(double scale) { scale_ = scale; }
  Tensor draw(std::size_t rows, std::size_t width);

 private:
  enum class Kind { sequential, per_row, zeros } kind_ = Kind::zeros;
  std::vector<Rng> streams_;
  double scale_ = 1.0;
};

struct TrainPass {
  Tensor loss;
  LossBreakdown breakdown;
  std::vector<Tensor> predicted_patterns;  // per step [rows, P*D]; empty in vrnn mode
};

// Recurrent state carried from warm-up into rollout.
struct InferenceState {
  Tensor h;
  Tensor context_prev;
  Tensor social_prev;
  Tensor position;  // [rows, D] current absolute position
};

struct Rollout {
  std::vector<Matrix> displacements;       // per row, F x D
  std::vector<Matrix> positions;           // per row, F x D absolute
  std::vector<Matrix> predicted_patterns;  // per row, F x (P*D); empty in vrnn mode
};

class SocialPatteRNN {
 public:
  SocialPatteRNN(const ModelConfig& config, std::uint64_t init_seed);
  SocialPatteRNN(const SocialPatteRNN&) = delete;
  SocialPatteRNN& operator=(const SocialPatteRNN&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  // Null in vrnn mode.
  ContextModule* context() { return context_.get(); }
  const ContextModule* context() const { return context_.get(); }

  // Teacher-forced pass over the training horizon.
  TrainPass forward_train(const Batch& batch, NoiseStreams& noise, const LossWeights& weights) const;

  // Runs the recurrence over the observed history.
  InferenceState warmup(const Batch& batch, NoiseStreams& noise) const;
  // Generates F steps from a warmed-up state; all rows advance together.
  Rollout rollout(InferenceState state, const Batch& batch, std::size_t F, NoiseStreams& noise) const;

 private:
  ContextFeature context_from(const Tensor& patterns, const Tensor& social) const;
  Tensor social_feature(const Tensor& positions, const Tensor& patterns, const Batch& batch, std::size_t step) const;

  ModelConfig config_;
  ParameterStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<ContextModule> context_;
};

}  // namespace sprnn
