#include <gtest/gtest.h>

#include <cmath>

#include "sprnn/backbone.hpp"
#include "sprnn/objective.hpp"

using namespace sprnn;

namespace {

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void zero_linear(Linear& l) {
  fill(l.weight(), 0.0);
  fill(l.bias(), 0.0);
}

Tensor random_input(Rng& rng, std::size_t rows, std::size_t cols, bool grad = false) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor({rows, cols}, std::move(v), grad);
}

BackboneConfig small(std::size_t d_c = 3) {
  BackboneConfig c;
  c.D = 2;
  c.d_x = 4;
  c.d_z = 3;
  c.d_c = d_c;
  c.d_h = 5;
  c.mlp_hidden = 6;
  c.mlp_depth = 2;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Layer-by-layer re-evaluation with plain loops.
std::vector<double> mlp_oracle(Mlp& mlp, const std::vector<double>& x) {
  std::vector<double> y = x;
  auto& layers = mlp.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto& l = layers[k];
    std::vector<double> out(l.out());
    for (std::size_t j = 0; j < l.out(); ++j) {
      double s = l.bias().data()[j];
      for (std::size_t i = 0; i < l.in(); ++i) s += y[i] * l.weight().data()[i * l.out() + j];
      out[j] = k + 1 < layers.size() ? std::max(0.0, s) : s;
    }
    y = out;
  }
  return y;
}

}  // namespace

TEST(LocationFeature, ZeroWeightsGiveZero) {
  ParameterStore store;
  Rng rng(1);
  Backbone bb(small(), store, rng);
  for (auto& l : bb.location_extractor().layers()) zero_linear(l);
  const Tensor out = bb.extract_location_feature(Tensor({1, 2}, {3.5, -2.0}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LocationFeature, IdentityLayer) {
  ParameterStore store;
  Rng rng(1);
  Mlp mlp(store, "id", 3, 3, 3, 1, false, rng);
  auto& l = mlp.layers().front();
  zero_linear(l);
  for (std::size_t i = 0; i < 3; ++i) l.weight().mutable_data()[i * 3 + i] = 1.0;
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0, -7});
  EXPECT_EQ(values(mlp(x)), values(x));
}

TEST(LocationFeature, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore store;
    Rng rng(seed);
    BackboneConfig c = small();
    c.mlp_depth = 3;
    Backbone bb(c, store, rng);
    const std::vector<double> x = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto got = values(bb.extract_location_feature(Tensor({1, 2}, x)));
    const auto want = mlp_oracle(bb.location_extractor(), x);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
  }
}

TEST(Heads, ZeroHeadsGiveUnitGaussianAndNoMotion) {
  ParameterStore store;
  Rng rng(2);
  Backbone bb(small(), store, rng);
  for (GaussianHead* g : {&bb.encoder(), &bb.prior_net(), &bb.decoder()}) {
    zero_linear(g->mu_head());
    zero_linear(g->logvar_head());
  }
  const Tensor x = random_input(rng, 2, 4), c = random_input(rng, 2, 3), h = random_input(rng, 2, 5);
  const Tensor zf = random_input(rng, 2, 3);
  for (const auto& g : {bb.encode_posterior(x, c, h), bb.prior(c, h), bb.decode(zf, c, h)}) {
    for (double v : g.mu.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.logvar.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Heads, DeterministicForFixedSeed) {
  auto run = [] {
    ParameterStore store;
    Rng rng(3);
    Backbone bb(small(), store, rng);
    Rng in(4);
    const Tensor x = random_input(in, 2, 4), c = random_input(in, 2, 3), h = random_input(in, 2, 5);
    return values(bb.encode_posterior(x, c, h).mu);
  };
  EXPECT_EQ(run(), run());
}

TEST(Heads, ShapeMismatchThrows) {
  ParameterStore store;
  Rng rng(2);
  Backbone bb(small(), store, rng);
  const Tensor x = random_input(rng, 2, 4), h = random_input(rng, 2, 5);
  EXPECT_THROW(bb.encode_posterior(x, random_input(rng, 2, 4), h), ShapeError);
  EXPECT_THROW(bb.prior(Tensor(), h), ShapeError);
  EXPECT_THROW(bb.encode_posterior(random_input(rng, 2, 3), random_input(rng, 2, 3), h), ShapeError);
}

TEST(Heads, PriorWithoutContextIgnoresIt) {
  ParameterStore store;
  Rng rng(5);
  BackboneConfig c = small(0);
  Backbone bb(c, store, rng);
  const Tensor h = random_input(rng, 3, 5);
  EXPECT_EQ(values(bb.prior(Tensor(), h).mu), values(bb.prior_net()(h).mu));

  ParameterStore store2;
  Rng rng2(5);
  BackboneConfig c2 = small(3);
  c2.prior_context = false;
  Backbone bb2(c2, store2, rng2);
  EXPECT_EQ(values(bb2.prior(random_input(rng, 3, 3), h).mu), values(bb2.prior(random_input(rng, 3, 3), h).mu));
}

TEST(Heads, LogvarIsClamped) {
  ParameterStore store;
  Rng rng(6);
  Backbone bb(small(), store, rng);
  zero_linear(bb.decoder().logvar_head());
  fill(bb.decoder().logvar_head().bias(), 50.0);
  const Tensor zf = random_input(rng, 2, 3), c = random_input(rng, 2, 3), h = random_input(rng, 2, 5);
  const GaussianParams g = bb.decode(zf, c, h);
  for (double v : g.logvar.data()) EXPECT_EQ(v, 10.0);
}

TEST(KlGradient, MatchesFiniteDifferences) {
  ParameterStore store;
  Rng rng(7);
  Backbone bb(small(), store, rng);
  const Tensor x = random_input(rng, 3, 4), c = random_input(rng, 3, 3), h = random_input(rng, 3, 5);
  auto loss = [&] { return sum(kl_rows(bb.encode_posterior(x, c, h), bb.prior(c, h))); };
  const auto r = finite_difference_check(loss, store, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(NllGradient, MatchesFiniteDifferences) {
  ParameterStore store;
  Rng rng(8);
  Backbone bb(small(), store, rng);
  const Tensor target = random_input(rng, 3, 2), zf = random_input(rng, 3, 3), c = random_input(rng, 3, 3),
               h = random_input(rng, 3, 5);
  auto loss = [&] { return sum(gaussian_nll_rows(target, bb.decode(zf, c, h))); };
  const auto r = finite_difference_check(loss, store, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(Latent, ZeroNoiseAndUnitSigma) {
  const GaussianParams g{Tensor({1, 3}, {1, -2, 3}), Tensor::zeros({1, 3})};
  EXPECT_EQ(values(sample_latent(g, Tensor::zeros({1, 3}))), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(values(sample_latent(g, Tensor({1, 3}, {0.5, 0.25, -1}))), (std::vector<double>{1.5, -1.75, 2}));
}

TEST(Latent, MonteCarloMoments) {
  const double mu = 0.7, logvar = -0.4;
  const std::size_t n = 100000;
  Rng rng(9);
  std::vector<double> noise(n);
  for (auto& v : noise) v = rng.normal();
  const GaussianParams g{Tensor::full({n, 1}, mu), Tensor::full({n, 1}, logvar)};
  const Tensor z = sample_latent(g, Tensor({n, 1}, noise));
  double m = 0, s2 = 0;
  for (double v : z.data()) m += v;
  m /= n;
  for (double v : z.data()) s2 += (v - m) * (v - m);
  s2 /= (n - 1);
  const double var = std::exp(logvar);
  EXPECT_LT(std::abs(m - mu), 3 * std::sqrt(var / n));
  EXPECT_LT(std::abs(s2 - var), 3 * var * std::sqrt(2.0 / (n - 1)));
}

TEST(Latent, ReparameterizationDerivatives) {
  Tensor mu({1, 3}, {0.2, -0.4, 1.1}, true);
  Tensor logvar({1, 3}, {0.3, -1.0, 0.0}, true);
  const Tensor noise({1, 3}, {0.5, -1.5, 2.0});
  backward(sum(sample_latent({mu, logvar}, noise)));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(mu.grad()[i], 1.0);
    EXPECT_NEAR(logvar.grad()[i], 0.5 * noise[i] * std::exp(0.5 * logvar[i]), 1e-15);
  }
  ParameterStore store;
  store.add("mu", mu.detach());
  store.add("logvar", logvar.detach());
  const auto r = finite_difference_check(
      [&] { return sum(sample_latent({store.at("mu"), store.at("logvar")}, noise)); }, store, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(Rnn, ZeroWeightsPinnedValue) {
  ParameterStore store;
  Rng rng(10);
  Backbone bb(small(), store, rng);
  for (const auto& name : store.names())
    if (name.rfind("backbone.rnn", 0) == 0) fill(store.at(name), 0.0);
  const Tensor xf = random_input(rng, 2, 4), zf = random_input(rng, 2, 3), c = random_input(rng, 2, 3);
  // u = sigmoid(0) = 1/2, n = tanh(0) = 0, so h' = h / 2
  const Tensor h0 = bb.rnn_step(xf, zf, c, bb.initial_state(2));
  for (double v : h0.data()) EXPECT_EQ(v, 0.0);
  const Tensor h = random_input(rng, 2, 5);
  const auto out = values(bb.rnn_step(xf, zf, c, h));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.5 * h[i]);
}

TEST(Rnn, IdenticalRowsGiveIdenticalState) {
  ParameterStore store;
  Rng rng(11);
  Backbone bb(small(), store, rng);
  const Tensor xf = random_input(rng, 1, 4), zf = random_input(rng, 1, 3), c = random_input(rng, 1, 3),
               h = random_input(rng, 1, 5);
  const std::vector<std::size_t> twice = {0, 0};
  const Tensor out = bb.rnn_step(gather_rows(xf, twice), gather_rows(zf, twice), gather_rows(c, twice),
                                 gather_rows(h, twice));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out.data()[j], out.data()[5 + j]);
}

TEST(Rnn, BackpropThroughTimeSixSteps) {
  ParameterStore store;
  Rng rng(12);
  Backbone bb(small(), store, rng);
  std::vector<Tensor> xs, zs, cs;
  for (int t = 0; t < 6; ++t) {
    xs.push_back(random_input(rng, 2, 2));
    zs.push_back(random_input(rng, 2, 3));
    cs.push_back(random_input(rng, 2, 3));
  }
  auto loss = [&] {
    Tensor h = bb.initial_state(2);
    for (int t = 0; t < 6; ++t)
      h = bb.rnn_step(bb.extract_location_feature(xs[t]), bb.extract_latent_feature(zs[t]), cs[t], h);
    return sum(square(h));
  };
  const auto r = finite_difference_check(loss, store, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(Purity, PermutingRowsPermutesOutputs) {
  ParameterStore store;
  Rng rng(13);
  Backbone bb(small(0), store, rng);
  const Tensor x = random_input(rng, 4, 2), z = random_input(rng, 4, 3), h = random_input(rng, 4, 5);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  auto step = [&](const Tensor& xx, const Tensor& zz, const Tensor& hh) {
    const Tensor xf = bb.extract_location_feature(xx);
    const Tensor zf = bb.extract_latent_feature(zz);
    return concat({bb.encode_posterior(xf, Tensor(), hh).mu, bb.decode(zf, Tensor(), hh).mu,
                   bb.rnn_step(xf, zf, Tensor(), hh)},
                  1);
  };
  const Tensor base = step(x, z, h);
  const Tensor permuted = step(gather_rows(x, perm), gather_rows(z, perm), gather_rows(h, perm));
  EXPECT_EQ(values(permuted), values(gather_rows(base, perm)));
}
