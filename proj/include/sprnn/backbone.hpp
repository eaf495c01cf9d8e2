#pragma once

// Variational recurrent backbone: location and latent feature extractors,
// posterior encoder, context-conditioned prior, Gaussian decoder over the
// next displacement and a GRU state update. All operations act on a batch of
// agents as rows; agents never mix here.

#include <string>

#include "sprnn/autodiff.hpp"
#include "sprnn/nn.hpp"
#include "sprnn/rng.hpp"

namespace sprnn {

struct BackboneConfig {
  std::size_t D = 2;
  std::size_t d_x = 16;
  std::size_t d_z = 16;
  std::size_t d_c = 0;  // set from the context module; 0 without context
  std::size_t d_h = 64;
  std::size_t mlp_depth = 2;
  std::size_t mlp_hidden = 32;
  bool rnn_context = true;    // feed the context into the recurrent update
  bool prior_context = true;  // condition the prior on the context
  double logvar_clamp = 10.0;

  void validate() const;
};

class Backbone {
 public:
  Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return config_; }

  Tensor extract_location_feature(const Tensor& displacement) const;
  // `context` may be undefined when d_c == 0.
  GaussianParams encode_posterior(const Tensor& location_feature, const Tensor& context, const Tensor& h_prev) const;
  GaussianParams prior(const Tensor& context, const Tensor& h_prev) const;
  Tensor extract_latent_feature(const Tensor& z) const;
  GaussianParams decode(const Tensor& latent_feature, const Tensor& context, const Tensor& h_prev) const;
  Tensor rnn_step(const Tensor& location_feature, const Tensor& latent_feature, const Tensor& context,
                  const Tensor& h_prev) const;
  Tensor initial_state(std::size_t rows) const;

  Mlp& location_extractor() { return f_x_; }
  Mlp& latent_extractor() { return f_z_; }
  GaussianHead& encoder() { return encoder_; }
  GaussianHead& prior_net() { return prior_; }
  GaussianHead& decoder() { return decoder_; }

 private:
  Tensor with_context(const Tensor& a, const Tensor& context, const Tensor& b) const;

  BackboneConfig config_;
  Mlp f_x_;
  Mlp f_z_;
  GaussianHead encoder_;
  GaussianHead prior_;
  GaussianHead decoder_;
  GruCell rnn_;
};

// Reparameterized draw z = mu + exp(logvar / 2) * noise.
Tensor sample_latent(const GaussianParams& g, const Tensor& noise);

}  // namespace sprnn
