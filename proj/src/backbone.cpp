#include "sprnn/backbone.hpp"

namespace sprnn {

void BackboneConfig::validate() const {
  if (D < 1 || d_x < 1 || d_z < 1 || d_h < 1 || mlp_depth < 1 || mlp_hidden < 1) {
    throw std::invalid_argument("backbone config: all widths and depths must be >= 1");
  }
  if (!(logvar_clamp > 0.0)) throw std::invalid_argument("backbone config: logvar_clamp must be positive");
}

Backbone::Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto& c = config_;
  f_x_ = Mlp(store, prefix + ".f_x", c.D, c.mlp_hidden, c.d_x, c.mlp_depth, false, rng);
  f_z_ = Mlp(store, prefix + ".f_z", c.d_z, c.mlp_hidden, c.d_z, c.mlp_depth, false, rng);
  encoder_ = GaussianHead(store, prefix + ".encoder", c.d_x + c.d_c + c.d_h, c.mlp_hidden, c.d_z, c.mlp_depth,
                          c.logvar_clamp, rng);
  prior_ = GaussianHead(store, prefix + ".prior", (c.prior_context ? c.d_c : 0) + c.d_h, c.mlp_hidden, c.d_z,
                        c.mlp_depth, c.logvar_clamp, rng);
  decoder_ = GaussianHead(store, prefix + ".decoder", c.d_z + c.d_c + c.d_h, c.mlp_hidden, c.D, c.mlp_depth,
                          c.logvar_clamp, rng);
  rnn_ = GruCell(store, prefix + ".rnn", c.d_x + c.d_z + (c.rnn_context ? c.d_c : 0), c.d_h, rng);
}

Tensor Backbone::with_context(const Tensor& a, const Tensor& context, const Tensor& b) const {
  std::vector<Tensor> parts;
  if (a.defined()) parts.push_back(a);
  if (context.defined() && config_.d_c > 0) {
    if (context.dim(1) != config_.d_c) {
      throw ShapeError("backbone: context width " + std::to_string(context.dim(1)) + " != d_c " +
                       std::to_string(config_.d_c));
    }
    parts.push_back(context);
  } else if (config_.d_c > 0) {
    throw ShapeError("backbone: context required (d_c = " + std::to_string(config_.d_c) + ")");
  }
  parts.push_back(b);
  return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

Tensor Backbone::extract_location_feature(const Tensor& displacement) const { return f_x_(displacement); }

GaussianParams Backbone::encode_posterior(const Tensor& location_feature, const Tensor& context,
                                          const Tensor& h_prev) const {
  return encoder_(with_context(location_feature, context, h_prev));
}

GaussianParams Backbone::prior(const Tensor& context, const Tensor& h_prev) const {
  if (!config_.prior_context) return prior_(h_prev);
  return prior_(with_context(Tensor(), context, h_prev));
}

Tensor Backbone::extract_latent_feature(const Tensor& z) const { return f_z_(z); }

GaussianParams Backbone::decode(const Tensor& latent_feature, const Tensor& context, const Tensor& h_prev) const {
  return decoder_(with_context(latent_feature, context, h_prev));
}

Tensor Backbone::rnn_step(const Tensor& location_feature, const Tensor& latent_feature, const Tensor& context,
                          const Tensor& h_prev) const {
  Tensor input = concat({location_feature, latent_feature}, 1);
  if (config_.rnn_context && config_.d_c > 0) input = concat({input, context}, 1);
  return rnn_(input, h_prev);
}

Tensor Backbone::initial_state(std::size_t rows) const { return Tensor::zeros({rows, config_.d_h}); }

Tensor sample_latent(const GaussianParams& g, const Tensor& noise) {
  return add(g.mu, mul(exp(scale(g.logvar, 0.5)), noise));
}

}  // namespace sprnn
