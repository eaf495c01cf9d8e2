#include <gtest/gtest.h>

#include <cmath>

#include "sprnn/objective.hpp"
#include "sprnn/rng.hpp"

using namespace sprnn;

namespace {

// Second implementation: log of the product of univariate normal densities.
double nll_density_oracle(const std::vector<double>& x, const std::vector<double>& mu, const std::vector<double>& lv) {
  double log_density = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double sigma = std::sqrt(std::exp(lv[d]));
    const double z = (x[d] - mu[d]) / sigma;
    log_density += std::log(std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI)));
  }
  return -log_density;
}

std::vector<double> draw(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(Nll, AtTheModeUnitVariance) {
  EXPECT_NEAR(gaussian_nll(std::vector<double>{1, 2}, std::vector<double>{1, 2}, std::vector<double>{0, 0}),
              0.5 * 2 * std::log(2 * M_PI), 1e-10);
  EXPECT_NEAR(gaussian_nll(std::vector<double>{1, 2}, std::vector<double>{1, 2}, std::vector<double>{0, 0}), 1.8379,
              1e-4);
}

TEST(Nll, UnitResidualAddsHalf) {
  const double base = gaussian_nll(std::vector<double>{0, 0}, std::vector<double>{0, 0}, std::vector<double>{0, 0});
  EXPECT_NEAR(gaussian_nll(std::vector<double>{1, 0}, std::vector<double>{0, 0}, std::vector<double>{0, 0}),
              base + 0.5, 1e-15);
}

TEST(Nll, MatchesDensityOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = draw(rng, 3, -2, 2), mu = draw(rng, 3, -2, 2), lv = draw(rng, 3, -1.5, 1.5);
    EXPECT_NEAR(gaussian_nll(x, mu, lv), nll_density_oracle(x, mu, lv), 1e-12);
  }
}

TEST(Nll, RowsAgreeWithScalar) {
  Rng rng(2);
  const auto x = draw(rng, 6), mu = draw(rng, 6), lv = draw(rng, 6);
  const GaussianParams g{Tensor({3, 2}, mu), Tensor({3, 2}, lv)};
  const Tensor rows = gaussian_nll_rows(Tensor({3, 2}, x), g);
  for (std::size_t r = 0; r < 3; ++r)
    EXPECT_NEAR(rows.data()[r],
                gaussian_nll(std::span(x).subspan(r * 2, 2), std::span(mu).subspan(r * 2, 2),
                             std::span(lv).subspan(r * 2, 2)),
                1e-14);
  EXPECT_THROW(gaussian_nll_rows(Tensor({3, 3}, std::vector<double>(9)), g), ShapeError);
}

TEST(Kl, IdenticalIsZero) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mu = draw(rng, 4), lv = draw(rng, 4);
    EXPECT_NEAR(kl_diag_gaussians(mu, lv, mu, lv), 0.0, 1e-12);
  }
}

TEST(Kl, UnitShift) {
  EXPECT_NEAR(kl_diag_gaussians(std::vector<double>{1}, std::vector<double>{0}, std::vector<double>{0},
                                std::vector<double>{0}),
              0.5, 1e-10);
}

TEST(Kl, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mq = draw(rng, 3, -3, 3), lq = draw(rng, 3, -3, 3), mp = draw(rng, 3, -3, 3), lp = draw(rng, 3, -3, 3);
    const double kl = kl_diag_gaussians(mq, lq, mp, lp);
    EXPECT_GE(kl, 0.0);
    EXPECT_GT(kl, 1e-12);
  }
}

TEST(Kl, MatchesMonteCarlo) {
  Rng params(5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto mq = draw(params, 2), lq = draw(params, 2), mp = draw(params, 2), lp = draw(params, 2);
    const double exact = kl_diag_gaussians(mq, lq, mp, lp);
    Rng rng(100 + trial);
    const std::size_t n = 1000000;
    double mean = 0.0, m2 = 0.0;
    std::vector<double> z(2);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t d = 0; d < 2; ++d) z[d] = mq[d] + std::exp(0.5 * lq[d]) * rng.normal();
      // log q - log p = nll_p - nll_q
      const double v = gaussian_nll(z, mp, lp) - gaussian_nll(z, mq, lq);
      const double delta = v - mean;
      mean += delta / static_cast<double>(k + 1);
      m2 += delta * (v - mean);
    }
    const double se = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
    EXPECT_LT(std::abs(mean - exact), 3 * se) << "exact " << exact << " mc " << mean;
  }
}

TEST(Kl, RowsAgreeWithScalar) {
  Rng rng(6);
  const auto mq = draw(rng, 6), lq = draw(rng, 6), mp = draw(rng, 6), lp = draw(rng, 6);
  const Tensor rows = kl_rows({Tensor({2, 3}, mq), Tensor({2, 3}, lq)}, {Tensor({2, 3}, mp), Tensor({2, 3}, lp)});
  for (std::size_t r = 0; r < 2; ++r)
    EXPECT_NEAR(rows.data()[r],
                kl_diag_gaussians(std::span(mq).subspan(r * 3, 3), std::span(lq).subspan(r * 3, 3),
                                  std::span(mp).subspan(r * 3, 3), std::span(lp).subspan(r * 3, 3)),
                1e-14);
}

TEST(Cvae, SingleTerm) {
  const std::vector<double> nll = {1.25}, kl = {0.5}, mask = {1};
  EXPECT_DOUBLE_EQ(cvae_loss(nll, kl, mask, 1.0), 1.75);
}

TEST(Cvae, DoublingIdenticalAgentsKeepsMean) {
  const std::vector<double> nll = {1.0, 2.0}, kl = {0.5, 0.25}, mask = {1, 1};
  const std::vector<double> nll2 = {1.0, 1.0, 2.0, 2.0}, kl2 = {0.5, 0.5, 0.25, 0.25}, mask2 = {1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(cvae_loss(nll, kl, mask, 1.0), cvae_loss(nll2, kl2, mask2, 1.0));
}

TEST(Cvae, ThreeAgentFixtureMatchesLoopOracle) {
  Rng rng(7);
  const std::size_t steps = 4, agents = 3;
  const auto nll = draw(rng, steps * agents, 0, 3), kl = draw(rng, steps * agents, 0, 1);
  const std::vector<double> mask = {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1};
  double total = 0.0, count = 0.0;
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t a = 0; a < agents; ++a) {
      const std::size_t i = t * agents + a;
      if (mask[i] == 0.0) continue;
      total += nll[i] + 0.3 * kl[i];
      count += 1.0;
    }
  EXPECT_NEAR(cvae_loss(nll, kl, mask, 0.3), total / count, 1e-14);
}

TEST(Cvae, NoContributingPairsThrows) {
  const std::vector<double> v = {1.0}, mask = {0.0};
  EXPECT_THROW(cvae_loss(v, v, mask, 1.0), std::invalid_argument);
}

TEST(Pattern, PerfectAndUnitOffset) {
  Rng rng(8);
  std::vector<Matrix> gt, same, off;
  for (int i = 0; i < 3; ++i) {
    Matrix m(1, 6, draw(rng, 6));
    gt.push_back(m);
    same.push_back(m);
    for (auto& v : m.values) v += 1.0;
    off.push_back(m);
  }
  const std::vector<double> mask = {1, 1, 1};
  EXPECT_EQ(pattern_loss(gt, same, mask), 0.0);
  EXPECT_NEAR(pattern_loss(gt, off, mask), 1.0, 1e-14);
}

TEST(Pattern, RandomMatchesOracleAndEmptyMaskThrows) {
  Rng rng(9);
  std::vector<Matrix> gt, pred;
  for (int i = 0; i < 4; ++i) {
    gt.emplace_back(1, 4, draw(rng, 4));
    pred.emplace_back(1, 4, draw(rng, 4));
  }
  const std::vector<double> mask = {1, 0, 1, 1};
  double se = 0.0;
  for (int i : {0, 2, 3})
    for (int k = 0; k < 4; ++k) se += std::pow(gt[i].values[k] - pred[i].values[k], 2);
  EXPECT_NEAR(pattern_loss(gt, pred, mask), se / 12.0, 1e-12);
  const std::vector<double> none = {0, 0, 0, 0};
  EXPECT_THROW(pattern_loss(gt, pred, none), std::invalid_argument);
}

TEST(Total, WeightsAndArithmetic) {
  const auto a = total_loss(1.0, 0.0, 1.0, LossWeights{});
  EXPECT_DOUBLE_EQ(a.total, 2.0);
  const auto b = total_loss(1.5, 0.25, 7.0, LossWeights{1.0, 0.0});
  EXPECT_DOUBLE_EQ(b.total, 1.75);
  const auto c = total_loss(1.0, 2.0, 3.0, LossWeights{0.5, 2.0});
  EXPECT_DOUBLE_EQ(c.total, 1.0 + 0.5 * 2.0 + 2.0 * 3.0);
}

TEST(Accumulator, MatchesScalarLossesAndIgnoresMaskedAgents) {
  Rng rng(10);
  const auto n1 = draw(rng, 3, 0, 2), k1 = draw(rng, 3, 0, 1), n2 = draw(rng, 3, 0, 2), k2 = draw(rng, 3, 0, 1);
  const auto p1 = draw(rng, 3, 0, 1), p2 = draw(rng, 3, 0, 1);
  const std::vector<double> mask = {1, 0, 1};
  LossAccumulator acc(LossWeights{0.5, 2.0});
  acc.add_cvae_step(Tensor::vector(n1), Tensor::vector(k1), mask);
  acc.add_cvae_step(Tensor::vector(n2), Tensor::vector(k2), mask);
  acc.add_pattern_step(Tensor::vector(p1), mask, 4);
  acc.add_pattern_step(Tensor::vector(p2), mask, 4);
  LossBreakdown b;
  const Tensor total = acc.total(&b);
  std::vector<double> nll, kl, m;
  for (const auto* pair : {&n1, &n2})
    for (double v : *pair) nll.push_back(v);
  for (const auto* pair : {&k1, &k2})
    for (double v : *pair) kl.push_back(v);
  for (int s = 0; s < 2; ++s)
    for (double v : mask) m.push_back(v);
  const double pattern = (p1[0] + p1[2] + p2[0] + p2[2]) / 16.0;
  EXPECT_NEAR(b.nll + 0.5 * b.kl, cvae_loss(nll, kl, m, 0.5), 1e-14);
  EXPECT_NEAR(b.pattern_mse, pattern, 1e-14);
  EXPECT_NEAR(total.item(), b.total, 1e-14);
  EXPECT_NEAR(b.total, b.nll + 0.5 * b.kl + 2.0 * b.pattern_mse, 1e-14);
  EXPECT_EQ(b.cvae_pairs, 4u);
  EXPECT_EQ(b.pattern_elements, 16u);

  // a fully masked extra agent changes nothing
  const std::vector<double> mask4 = {1, 0, 1, 0};
  auto extend = [](std::vector<double> v) {
    v.push_back(99.0);
    return v;
  };
  LossAccumulator acc2(LossWeights{0.5, 2.0});
  acc2.add_cvae_step(Tensor::vector(extend(n1)), Tensor::vector(extend(k1)), mask4);
  acc2.add_cvae_step(Tensor::vector(extend(n2)), Tensor::vector(extend(k2)), mask4);
  acc2.add_pattern_step(Tensor::vector(extend(p1)), mask4, 4);
  acc2.add_pattern_step(Tensor::vector(extend(p2)), mask4, 4);
  EXPECT_EQ(acc2.total(nullptr).item(), total.item());
}
