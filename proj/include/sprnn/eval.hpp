#pragma once

// Best-of-K sampling, displacement metrics and evaluation reports.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprnn/model.hpp"

namespace sprnn {

struct AgentPrediction {
  std::string scene_id;
  std::size_t window = 0;
  std::string agent_id;
  Matrix history;               // H x D absolute
  Matrix ground_truth;          // F x D absolute
  std::vector<Matrix> samples;  // K trajectories, each F x D absolute
};

struct PredictionSet {
  std::size_t K = 0;
  std::size_t F = 0;
  std::size_t D = 0;
  std::vector<AgentPrediction> agents;
};

struct EvalOptions {
  std::size_t K = 20;
  std::uint64_t seed = 0;
  bool joint_best = false;   // report the FDE of the best-ADE sample instead of an independent minimum
  double noise_scale = 1.0;  // 0 collapses every sample to the latent means
  std::size_t threads = 1;
};

// Seed of the noise stream for one (scene, window, sample index, agent).
std::uint64_t noise_stream_seed(std::uint64_t seed, const std::string& scene_id, std::size_t window, std::size_t k,
                                const std::string& agent_id);

// K rollouts of one sample; only complete agents are reported.
PredictionSet sample_k(const Sample& sample, const SocialPatteRNN& model, std::size_t K, std::uint64_t seed,
                       double noise_scale = 1.0);
PredictionSet predict(std::span<const Sample> samples, const SocialPatteRNN& model, const EvalOptions& options);

double ade(const Matrix& prediction, const Matrix& truth);
double fde(const Matrix& prediction, const Matrix& truth);

struct MetricsReport {
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::string units;
  std::size_t agent_windows = 0;
  std::size_t windows = 0;
  std::size_t K = 0;
  bool joint_best = false;
  std::string averaging = "agent-window";
};

MetricsReport score(const PredictionSet& predictions, bool joint_best, const std::string& units);
MetricsReport evaluate(std::span<const Sample> samples, const SocialPatteRNN& model, const EvalOptions& options,
                       const std::string& units);

nlohmann::json to_json(const MetricsReport& report);

// CSV columns: scene_id,window,agent_id,k,t,x,y[,z]; t is the 0-based future step.
void write_predictions_csv(const std::filesystem::path& file, const PredictionSet& predictions);
// Reads predictions and attaches history and ground truth from the matching samples.
PredictionSet read_predictions_csv(const std::filesystem::path& file, std::span<const Sample> samples);

// Single-file overlay of history, ground truth and sampled futures.
void write_svg(const std::filesystem::path& file, const PredictionSet& predictions, std::size_t max_agents = 64);

}  // namespace sprnn
