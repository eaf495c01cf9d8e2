#pragma once

// Loss terms: Gaussian reconstruction NLL, KL between diagonal Gaussians,
// the per-step evidence bound, the pattern reconstruction loss and the total.

#include <cstddef>
#include <span>
#include <string>

#include "sprnn/autodiff.hpp"
#include "sprnn/matrix.hpp"
#include "sprnn/nn.hpp"

namespace sprnn {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// 0.5 * sum_d [logvar_d + (x_d - mu_d)^2 / exp(logvar_d) + log 2pi]
double gaussian_nll(std::span<const double> x, std::span<const double> mu, std::span<const double> logvar);

// KL(q || p) for diagonal Gaussians given as (mean, log-variance) pairs.
double kl_diag_gaussians(std::span<const double> mu_q, std::span<const double> logvar_q,
                         std::span<const double> mu_p, std::span<const double> logvar_p);

// Row-wise versions over [rows, D] tensors; both return shape [rows].
Tensor gaussian_nll_rows(const Tensor& x, const GaussianParams& g);
Tensor kl_rows(const GaussianParams& q, const GaussianParams& p);

// Sum of squared errors per row, shape [rows].
Tensor squared_error_rows(const Tensor& prediction, const Tensor& target);

// sum_i mask_i * values_i as a scalar tensor. The mask is a constant.
Tensor masked_sum(const Tensor& values, std::span<const double> mask);

struct LossWeights {
  double kl_weight = 1.0;
  double pattern_weight = 1.0;
};

struct LossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  double pattern_mse = 0.0;
  double total = 0.0;
  std::size_t cvae_pairs = 0;        // contributing (agent, step) pairs
  std::size_t pattern_elements = 0;  // contributing pattern scalars
};

// Mean over contributing (agent, step) pairs of nll + kl_weight * kl. Arrays
// are indexed [step * agents + agent]; mask entries are 0 or 1.
double cvae_loss(std::span<const double> nll, std::span<const double> kl, std::span<const double> mask,
                 double kl_weight);

// Mean over present (agent, step, element) of squared pattern error.
// Matrices are per (agent, step) flattened patterns; mask per pair.
double pattern_loss(std::span<const Matrix> gt_patterns, std::span<const Matrix> predicted,
                    std::span<const double> mask);

// Accumulates the differentiable loss over a teacher-forced pass.
class LossAccumulator {
 public:
  explicit LossAccumulator(LossWeights weights) : weights_(weights) {}

  void add_cvae_step(const Tensor& nll_rows, const Tensor& kl_rows, std::span<const double> mask);
  void add_pattern_step(const Tensor& sq_error_rows, std::span<const double> mask, std::size_t width);

  // Normalized total loss tensor and its breakdown.
  Tensor total(LossBreakdown* breakdown) const;

 private:
  LossWeights weights_;
  Tensor nll_sum_;
  Tensor kl_sum_;
  Tensor pattern_sum_;
  std::size_t pairs_ = 0;
  std::size_t pattern_elements_ = 0;
};

// total = (nll + kl_weight * kl) + pattern_weight * pattern_mse.
LossBreakdown total_loss(double nll, double kl, double pattern_mse, const LossWeights& weights);

}  // namespace sprnn
