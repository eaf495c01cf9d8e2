#include "sprnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sprnn {

std::string to_string(TrainHorizon horizon) { return horizon == TrainHorizon::full ? "full" : "history"; }

TrainHorizon parse_train_horizon(const std::string& text) {
  if (text == "full") return TrainHorizon::full;
  if (text == "history") return TrainHorizon::history;
  throw std::invalid_argument("unknown train_horizon '" + text + "' (expected history or full)");
}

void ModelConfig::validate() const {
  backbone.validate();
  context.validate();
  if (backbone.D != context.D) throw std::invalid_argument("model config: backbone and context disagree on D");
  if (backbone.d_c != context.d_c()) throw std::invalid_argument("model config: backbone d_c does not match context");
  if (backbone.d_h != context.d_h) throw std::invalid_argument("model config: backbone and context disagree on d_h");
  if (influence_lag > 1) throw std::invalid_argument("model config: influence_lag must be 0 or 1");
}

Batch make_batch(std::span<const Sample* const> samples, std::size_t copies) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  if (copies < 1) throw std::invalid_argument("make_batch: copies must be >= 1");
  Batch batch;
  const Sample& first = *samples.front();
  batch.D = first.D;
  batch.P = first.P;
  batch.H = first.H;
  batch.F = first.F;
  std::vector<std::size_t> groups;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Sample& sample = *samples[s];
    if (sample.D != batch.D || sample.P != batch.P || sample.H != batch.H || sample.F != batch.F) {
      throw std::invalid_argument("make_batch: samples disagree on D/P/H/F");
    }
    batch.samples.push_back(&sample);
    for (std::size_t k = 0; k < copies; ++k) {
      groups.push_back(sample.agents());
      for (std::size_t i = 0; i < sample.agents(); ++i) {
        batch.row_sample.push_back(s);
        batch.row_agent.push_back(i);
        batch.row_copy.push_back(k);
      }
    }
  }
  batch.rows = batch.row_sample.size();
  batch.layout = SocialLayout::from_groups(groups);

  const std::size_t D = batch.D, PD = batch.P * batch.D, steps = batch.steps();
  std::vector<std::vector<double>> pos(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto start = batch.samples[batch.row_sample[r]]->start_abs.row(batch.row_agent[r]);
    pos[r].assign(start.begin(), start.end());
    batch.loss_mask.push_back(batch.samples[batch.row_sample[r]]->complete[batch.row_agent[r]] ? 1.0 : 0.0);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> disp(batch.rows * D), before(batch.rows * D), pat(batch.rows * PD);
    std::vector<bool> present(batch.rows);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const Sample& sample = *batch.samples[batch.row_sample[r]];
      const std::size_t a = batch.row_agent[r];
      const auto d = sample.displacements[a].row(t);
      const auto p = sample.gt_patterns[a].row(t);
      for (std::size_t k = 0; k < D; ++k) {
        before[r * D + k] = pos[r][k];
        disp[r * D + k] = d[k];
        pos[r][k] += d[k];
      }
      std::copy(p.begin(), p.end(), pat.begin() + static_cast<std::ptrdiff_t>(r * PD));
      present[r] = sample.present[a][t];
    }
    batch.displacement.emplace_back(Shape{batch.rows, D}, std::move(disp));
    batch.position_before.emplace_back(Shape{batch.rows, D}, std::move(before));
    batch.gt_pattern.emplace_back(Shape{batch.rows, PD}, std::move(pat));
    batch.present.push_back(std::move(present));
  }
  return batch;
}

NoiseStreams NoiseStreams::sequential(std::uint64_t seed) {
  NoiseStreams n;
  n.kind_ = Kind::sequential;
  n.streams_.emplace_back(seed);
  return n;
}

NoiseStreams NoiseStreams::per_row(std::vector<std::uint64_t> seeds) {
  NoiseStreams n;
  n.kind_ = Kind::per_row;
  for (auto s : seeds) n.streams_.emplace_back(s);
  return n;
}

NoiseStreams NoiseStreams::zeros() { return NoiseStreams{}; }

Tensor NoiseStreams::draw(std::size_t rows, std::size_t width) {
  std::vector<double> values(rows * width, 0.0);
  if (kind_ == Kind::sequential) {
    for (auto& v : values) v = streams_.front().normal();
  } else if (kind_ == Kind::per_row) {
    if (streams_.size() != rows) throw std::invalid_argument("NoiseStreams: stream count does not match rows");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < width; ++k) values[r * width + k] = streams_[r].normal();
  }
  if (scale_ != 1.0)
    for (auto& v : values) v *= scale_;
  return Tensor({rows, width}, std::move(values));
}

SocialPatteRNN::SocialPatteRNN(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.backbone.d_c = config_.context.d_c();
  config_.context.D = config_.backbone.D;
  config_.context.d_h = config_.backbone.d_h;
  config_.validate();
  Rng rng(derive_seed(init_seed, 0x1417u));
  backbone_ = std::make_unique<Backbone>(config_.backbone, params_, rng);
  if (config_.context.uses_patterns()) context_ = std::make_unique<ContextModule>(config_.context, params_, rng);
}

ContextFeature SocialPatteRNN::context_from(const Tensor& patterns, const Tensor& social) const {
  return context_->build_context(context_->extract_pattern_feature(patterns), social);
}

Tensor SocialPatteRNN::social_feature(const Tensor& positions, const Tensor& patterns, const Batch& batch,
                                      std::size_t step) const {
  const Tensor goals = compute_subgoals(positions, patterns, batch.P);
  const Tensor influences = social_influence_rows(positions, goals, batch.layout);
  return context_->interaction_attend(influences, batch.layout.slot_mask(batch.present[step]), batch.layout.slots);
}

TrainPass SocialPatteRNN::forward_train(const Batch& batch, NoiseStreams& noise, const LossWeights& weights) const {
  const std::size_t steps = config_.train_horizon == TrainHorizon::full ? batch.steps() : batch.H;
  const bool patterns = config_.context.uses_patterns();
  const bool social = config_.context.uses_social();
  const std::size_t width = batch.P * batch.D;
  const Backbone& bb = *backbone_;

  LossAccumulator acc(weights);
  TrainPass pass;
  Tensor h = bb.initial_state(batch.rows);
  Tensor context_prev, social_prev;
  if (patterns) {
    const Tensor& boot = batch.gt_pattern[0];
    if (social) social_prev = social_feature(batch.position_before[0], boot, batch, 0);
    context_prev = context_from(boot, social_prev).combined;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor context;
    if (patterns) {
      const Tensor predicted = context_->predict_pattern(context_prev, h);
      acc.add_pattern_step(squared_error_rows(predicted, batch.gt_pattern[t]), batch.loss_mask, width);
      pass.predicted_patterns.push_back(predicted);
      const Tensor used = config_.train_predicted_patterns ? predicted : batch.gt_pattern[t];
      Tensor soc;
      if (social) {
        if (config_.influence_lag == 0) {
          soc = social_feature(batch.position_before[t], used, batch, t);
        } else {
          soc = social_prev;
          if (t + 1 < steps) social_prev = social_feature(batch.position_before[t], used, batch, t);
        }
      }
      context = context_from(used, soc).combined;
    }
    const Tensor& x = batch.displacement[t];
    const Tensor x_feat = bb.extract_location_feature(x);
    const GaussianParams posterior = bb.encode_posterior(x_feat, context, h);
    const GaussianParams prior = bb.prior(context, h);
    const Tensor z = sample_latent(posterior, noise.draw(batch.rows, bb.config().d_z));
    const Tensor z_feat = bb.extract_latent_feature(z);
    const GaussianParams recon = bb.decode(z_feat, context, h);
    acc.add_cvae_step(gaussian_nll_rows(x, recon), kl_rows(posterior, prior), batch.loss_mask);
    h = bb.rnn_step(x_feat, z_feat, context, h);
    context_prev = context;
  }
  pass.loss = acc.total(&pass.breakdown);
  return pass;
}

InferenceState SocialPatteRNN::warmup(const Batch& batch, NoiseStreams& noise) const {
  NoGradGuard no_grad;
  const bool patterns = config_.context.uses_patterns();
  const bool social = config_.context.uses_social();
  const Backbone& bb = *backbone_;
  if (std::all_of(batch.loss_mask.begin(), batch.loss_mask.end(), [](double m) { return m == 0.0; })) {
    throw std::invalid_argument("warmup: every agent in the batch is masked");
  }

  InferenceState state;
  state.h = bb.initial_state(batch.rows);
  if (patterns) {
    const Tensor boot = Tensor::zeros({batch.rows, batch.P * batch.D});
    if (social) state.social_prev = social_feature(batch.position_before[0], boot, batch, 0);
    state.context_prev = context_from(boot, state.social_prev).combined;
  }
  for (std::size_t t = 0; t < batch.H; ++t) {
    Tensor context;
    if (patterns) {
      const Tensor predicted = context_->predict_pattern(state.context_prev, state.h);
      const Tensor used = config_.warmup_teacher_patterns ? batch.gt_pattern[t] : predicted;
      Tensor soc;
      if (social) {
        const Tensor now = social_feature(batch.position_before[t], used, batch, t);
        soc = config_.influence_lag == 0 ? now : state.social_prev;
        state.social_prev = now;
      }
      context = context_from(used, soc).combined;
    }
    const Tensor& x = batch.displacement[t];
    const Tensor x_feat = bb.extract_location_feature(x);
    const GaussianParams posterior = bb.encode_posterior(x_feat, context, state.h);
    const Tensor z = sample_latent(posterior, noise.draw(batch.rows, bb.config().d_z));
    state.h = bb.rnn_step(x_feat, bb.extract_latent_feature(z), context, state.h);
    state.context_prev = context;
  }
  state.position = add(batch.position_before[batch.H - 1], batch.displacement[batch.H - 1]);
  return state;
}

Rollout SocialPatteRNN::rollout(InferenceState state, const Batch& batch, std::size_t F, NoiseStreams& noise) const {
  NoGradGuard no_grad;
  const bool patterns = config_.context.uses_patterns();
  const bool social = config_.context.uses_social();
  const Backbone& bb = *backbone_;
  const std::size_t D = batch.D, rows = batch.rows, width = batch.P * batch.D;

  Rollout out;
  out.displacements.assign(rows, Matrix(F, D));
  out.positions.assign(rows, Matrix(F, D));
  if (patterns) out.predicted_patterns.assign(rows, Matrix(F, width));

  for (std::size_t f = 0; f < F; ++f) {
    // Presence beyond the sample window is taken from its last step.
    const std::size_t step = std::min(batch.H + f, batch.steps() - 1);
    Tensor context;
    if (patterns) {
      const Tensor predicted = context_->predict_pattern(state.context_prev, state.h);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(predicted.data().data() + r * width, width, out.predicted_patterns[r].row(f).begin());
      Tensor soc;
      if (social) {
        const Tensor now = social_feature(state.position, predicted, batch, step);
        soc = config_.influence_lag == 0 ? now : state.social_prev;
        state.social_prev = now;
      }
      context = context_from(predicted, soc).combined;
    }
    const GaussianParams prior = bb.prior(context, state.h);
    const Tensor z = sample_latent(prior, noise.draw(rows, bb.config().d_z));
    const Tensor z_feat = bb.extract_latent_feature(z);
    const Tensor step_disp = bb.decode(z_feat, context, state.h).mu;
    for (double v : step_disp.data()) {
      if (!std::isfinite(v)) throw DomainError("rollout: non-finite displacement at future step " + std::to_string(f));
    }
    state.h = bb.rnn_step(bb.extract_location_feature(step_disp), z_feat, context, state.h);
    state.context_prev = context;
    state.position = add(state.position, step_disp);
    const auto dv = step_disp.data();
    const auto pv = state.position.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t d = 0; d < D; ++d) {
        out.displacements[r](f, d) = dv[r * D + d];
        out.positions[r](f, d) = pv[r * D + d];
      }
    }
  }
  return out;
}

}  // namespace sprnn
