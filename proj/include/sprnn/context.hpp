#pragma once

// Context module: pattern features, pattern prediction, sub-goals, social
// influences and their aggregation (mean pool or multi-head self-attention).

#include <span>
#include <string>
#include <vector>

#include "sprnn/autodiff.hpp"
#include "sprnn/matrix.hpp"
#include "sprnn/nn.hpp"
#include "sprnn/rng.hpp"

namespace sprnn {

// Which parts of the context are active, in ablation order.
enum class AblationMode { vrnn, pat, pat_soc, pat_soc_att };

std::string to_string(AblationMode mode);
AblationMode parse_ablation(const std::string& text);

struct ContextConfig {
  std::size_t D = 2;
  std::size_t P = 6;
  std::size_t d_p = 16;
  std::size_t d_s = 16;
  std::size_t heads = 4;
  std::size_t d_h = 64;
  std::size_t mlp_depth = 2;
  std::size_t mlp_hidden = 32;
  AblationMode mode = AblationMode::pat_soc_att;

  bool uses_patterns() const { return mode != AblationMode::vrnn; }
  bool uses_social() const { return mode == AblationMode::pat_soc || mode == AblationMode::pat_soc_att; }
  bool uses_attention() const { return mode == AblationMode::pat_soc_att; }
  std::size_t d_c() const { return (uses_patterns() ? d_p : 0) + (uses_social() ? d_s : 0); }
  void validate() const;
};

struct ContextFeature {
  Tensor pattern_feature;  // [rows, d_p] or undefined
  Tensor social_feature;   // [rows, d_s] or undefined
  Tensor combined;         // concatenation; undefined when both are
};

// Neighbourhoods of a batch: row m attends over `slots` rows of the same
// scene. Unused slots point at the row itself and are never valid.
struct SocialLayout {
  std::size_t rows = 0;
  std::size_t slots = 0;
  std::vector<std::size_t> neighbour;  // rows * slots
  std::vector<bool> occupied;          // rows * slots

  // Builds the layout for consecutive groups of the given sizes.
  static SocialLayout from_groups(std::span<const std::size_t> group_sizes);
  // Valid slots at a step given per-row presence. The self slot is always valid.
  std::vector<double> slot_mask(const std::vector<bool>& present) const;
};

// Scalar-level sub-goal: x_abs + sum of the pattern rows.
std::vector<double> compute_subgoal(std::span<const double> x_abs, const Matrix& pattern);

struct SocialInfluenceSet {
  Matrix rows;              // N x D, row j = g^j - x^i
  std::vector<bool> valid;  // per row
};

SocialInfluenceSet compute_social_influences(const Matrix& x_abs_all, const Matrix& subgoals,
                                             const std::vector<bool>& present, std::size_t i);

// Batched sub-goals [rows, D] from positions [rows, D] and flattened patterns [rows, P*D].
Tensor compute_subgoals(const Tensor& positions, const Tensor& patterns, std::size_t P);
// Influence rows [rows * slots, D]: subgoal(neighbour) - position(self).
Tensor social_influence_rows(const Tensor& positions, const Tensor& subgoals, const SocialLayout& layout);

class ContextModule {
 public:
  ContextModule(const ContextConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix = "context");

  const ContextConfig& config() const { return config_; }
  std::size_t d_c() const { return config_.d_c(); }

  Tensor extract_pattern_feature(const Tensor& patterns) const;
  Tensor predict_pattern(const Tensor& context_prev, const Tensor& h_prev) const;
  // Aggregates influence rows [rows * slots, D] into one social feature per
  // row. `slot_mask` holds 0/1 per (row, slot). Attention weights per head
  // ([rows, slots, slots]) are written to `attention` when requested.
  Tensor interaction_attend(const Tensor& influences, std::span<const double> slot_mask, std::size_t slots,
                            std::vector<Tensor>* attention = nullptr) const;
  ContextFeature build_context(const Tensor& pattern_feature, const Tensor& social_feature) const;

  Mlp& pattern_extractor() { return f_p_; }
  Mlp& pattern_net() { return pattern_net_; }
  Mlp& influence_extractor() { return f_s_; }

 private:
  ContextConfig config_;
  Mlp f_p_;
  Mlp pattern_net_;
  Mlp f_s_;
  Linear query_, key_, value_, output_;
};

}  // namespace sprnn
