#include "sprnn/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace sprnn {

double gaussian_nll(std::span<const double> x, std::span<const double> mu, std::span<const double> logvar) {
  if (x.size() != mu.size() || x.size() != logvar.size()) throw ShapeError("gaussian_nll: dimension mismatch");
  double total = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double r = x[d] - mu[d];
    total += logvar[d] + r * r * std::exp(-logvar[d]) + kLog2Pi;
  }
  return 0.5 * total;
}

double kl_diag_gaussians(std::span<const double> mu_q, std::span<const double> logvar_q,
                         std::span<const double> mu_p, std::span<const double> logvar_p) {
  const std::size_t n = mu_q.size();
  if (logvar_q.size() != n || mu_p.size() != n || logvar_p.size() != n) {
    throw ShapeError("kl_diag_gaussians: dimension mismatch");
  }
  double total = 0.0;
  for (std::size_t d = 0; d < n; ++d) {
    const double diff = mu_q[d] - mu_p[d];
    total += 0.5 * (logvar_p[d] - logvar_q[d] + (std::exp(logvar_q[d]) + diff * diff) * std::exp(-logvar_p[d]) - 1.0);
  }
  return total;
}

Tensor gaussian_nll_rows(const Tensor& x, const GaussianParams& g) {
  const auto& s = x.shape();
  if (s.size() != 2 || g.mu.shape() != s || g.logvar.shape() != s) {
    throw ShapeError("gaussian_nll_rows: shapes " + shape_str(s) + ", " + shape_str(g.mu.shape()) + ", " +
                     shape_str(g.logvar.shape()));
  }
  const std::size_t rows = s[0], D = s[1];
  std::vector<double> out(rows);
  const auto xv = x.data(), mv = g.mu.data(), lv = g.logvar.data();
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = gaussian_nll(xv.subspan(r * D, D), mv.subspan(r * D, D), lv.subspan(r * D, D));
  }
  return make_op_result("gaussian_nll", {rows}, std::move(out), {x, g.mu, g.logvar}, [D](detail::Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& mv = self.inputs[1]->value;
    const auto& lv = self.inputs[2]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double up = self.grad[i / D];
      const double inv = std::exp(-lv[i]);
      const double r = xv[i] - mv[i];
      if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer()[i] += up * r * inv;
      if (self.inputs[1]->requires_grad) self.inputs[1]->grad_buffer()[i] -= up * r * inv;
      if (self.inputs[2]->requires_grad) self.inputs[2]->grad_buffer()[i] += up * 0.5 * (1.0 - r * r * inv);
    }
  });
}

Tensor kl_rows(const GaussianParams& q, const GaussianParams& p) {
  const auto& s = q.mu.shape();
  if (s.size() != 2 || q.logvar.shape() != s || p.mu.shape() != s || p.logvar.shape() != s) {
    throw ShapeError("kl_rows: shapes " + shape_str(s) + " and " + shape_str(p.mu.shape()));
  }
  const std::size_t rows = s[0], D = s[1];
  std::vector<double> out(rows);
  const auto mq = q.mu.data(), lq = q.logvar.data(), mp = p.mu.data(), lp = p.logvar.data();
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = kl_diag_gaussians(mq.subspan(r * D, D), lq.subspan(r * D, D), mp.subspan(r * D, D), lp.subspan(r * D, D));
  }
  return make_op_result("kl", {rows}, std::move(out), {q.mu, q.logvar, p.mu, p.logvar}, [D](detail::Node& self) {
    const auto& mq = self.inputs[0]->value;
    const auto& lq = self.inputs[1]->value;
    const auto& mp = self.inputs[2]->value;
    const auto& lp = self.inputs[3]->value;
    for (std::size_t i = 0; i < mq.size(); ++i) {
      const double up = self.grad[i / D];
      const double inv_p = std::exp(-lp[i]);
      const double var_q = std::exp(lq[i]);
      const double diff = mq[i] - mp[i];
      if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer()[i] += up * diff * inv_p;
      if (self.inputs[1]->requires_grad) self.inputs[1]->grad_buffer()[i] += up * 0.5 * (var_q * inv_p - 1.0);
      if (self.inputs[2]->requires_grad) self.inputs[2]->grad_buffer()[i] -= up * diff * inv_p;
      if (self.inputs[3]->requires_grad)
        self.inputs[3]->grad_buffer()[i] += up * 0.5 * (1.0 - (var_q + diff * diff) * inv_p);
    }
  });
}

Tensor squared_error_rows(const Tensor& prediction, const Tensor& target) {
  return sum_last(square(sub(prediction, target)));
}

Tensor masked_sum(const Tensor& values, std::span<const double> mask) {
  if (values.rank() != 1 || values.dim(0) != mask.size()) {
    throw ShapeError("masked_sum: values " + shape_str(values.shape()) + " vs mask of " + std::to_string(mask.size()));
  }
  return sum(mul(values, Tensor::vector(std::vector<double>(mask.begin(), mask.end()))));
}

double cvae_loss(std::span<const double> nll, std::span<const double> kl, std::span<const double> mask,
                 double kl_weight) {
  if (nll.size() != kl.size() || nll.size() != mask.size()) throw ShapeError("cvae_loss: length mismatch");
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < nll.size(); ++i) {
    total += mask[i] * (nll[i] + kl_weight * kl[i]);
    count += mask[i];
  }
  if (count == 0.0) throw std::invalid_argument("cvae_loss: no contributing (agent, step) pairs");
  return total / count;
}

double pattern_loss(std::span<const Matrix> gt_patterns, std::span<const Matrix> predicted,
                    std::span<const double> mask) {
  if (gt_patterns.size() != predicted.size() || gt_patterns.size() != mask.size()) {
    throw ShapeError("pattern_loss: length mismatch");
  }
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < gt_patterns.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const auto& a = gt_patterns[i].values;
    const auto& b = predicted[i].values;
    if (a.size() != b.size()) throw ShapeError("pattern_loss: pattern size mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) total += (a[k] - b[k]) * (a[k] - b[k]);
    count += static_cast<double>(a.size());
  }
  if (count == 0.0) throw std::invalid_argument("pattern_loss: empty mask");
  return total / count;
}

void LossAccumulator::add_cvae_step(const Tensor& nll, const Tensor& kl, std::span<const double> mask) {
  const Tensor n = masked_sum(nll, mask);
  const Tensor k = masked_sum(kl, mask);
  nll_sum_ = nll_sum_.defined() ? add(nll_sum_, n) : n;
  kl_sum_ = kl_sum_.defined() ? add(kl_sum_, k) : k;
  for (double m : mask) pairs_ += m != 0.0 ? 1 : 0;
}

void LossAccumulator::add_pattern_step(const Tensor& sq_error, std::span<const double> mask, std::size_t width) {
  const Tensor s = masked_sum(sq_error, mask);
  pattern_sum_ = pattern_sum_.defined() ? add(pattern_sum_, s) : s;
  for (double m : mask) pattern_elements_ += m != 0.0 ? width : 0;
}

Tensor LossAccumulator::total(LossBreakdown* breakdown) const {
  if (pairs_ == 0) throw std::invalid_argument("loss: no contributing (agent, step) pairs");
  const double inv = 1.0 / static_cast<double>(pairs_);
  Tensor cvae = add(scale(nll_sum_, inv), scale(kl_sum_, weights_.kl_weight * inv));
  Tensor total = cvae;
  double pattern = 0.0;
  if (pattern_sum_.defined() && pattern_elements_ > 0) {
    const Tensor pat = scale(pattern_sum_, 1.0 / static_cast<double>(pattern_elements_));
    pattern = pat.item();
    total = add(cvae, scale(pat, weights_.pattern_weight));
  }
  if (breakdown) {
    *breakdown = total_loss(nll_sum_.item() * inv, kl_sum_.item() * inv, pattern, weights_);
    breakdown->total = total.item();
    breakdown->cvae_pairs = pairs_;
    breakdown->pattern_elements = pattern_elements_;
  }
  return total;
}

LossBreakdown total_loss(double nll, double kl, double pattern_mse, const LossWeights& weights) {
  LossBreakdown out;
  out.nll = nll;
  out.kl = kl;
  out.pattern_mse = pattern_mse;
  out.total = (nll + weights.kl_weight * kl) + weights.pattern_weight * pattern_mse;
  return out;
}

}  // namespace sprnn
