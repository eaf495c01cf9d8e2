#include "sprnn/context.hpp"

#include <cmath>

namespace sprnn {

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::vrnn: return "vrnn";
    case AblationMode::pat: return "pat";
    case AblationMode::pat_soc: return "pat_soc";
    case AblationMode::pat_soc_att: return "pat_soc_att";
  }
  return "pat_soc_att";
}

AblationMode parse_ablation(const std::string& text) {
  if (text == "vrnn") return AblationMode::vrnn;
  if (text == "pat") return AblationMode::pat;
  if (text == "pat_soc") return AblationMode::pat_soc;
  if (text == "pat_soc_att") return AblationMode::pat_soc_att;
  throw std::invalid_argument("unknown ablation '" + text + "' (expected vrnn, pat, pat_soc or pat_soc_att)");
}

void ContextConfig::validate() const {
  if (D < 1 || P < 1 || d_h < 1 || mlp_depth < 1 || mlp_hidden < 1) {
    throw std::invalid_argument("context config: widths and depths must be >= 1");
  }
  if (uses_patterns() && d_p < 1) throw std::invalid_argument("context config: d_p must be >= 1");
  if (uses_social() && d_s < 1) throw std::invalid_argument("context config: d_s must be >= 1");
  if (uses_attention() && (heads < 1 || d_s % heads != 0)) {
    throw std::invalid_argument("context config: d_s (" + std::to_string(d_s) + ") must be divisible by heads (" +
                                std::to_string(heads) + ")");
  }
}

SocialLayout SocialLayout::from_groups(std::span<const std::size_t> group_sizes) {
  SocialLayout layout;
  for (auto n : group_sizes) {
    layout.rows += n;
    layout.slots = std::max(layout.slots, n);
  }
  layout.neighbour.resize(layout.rows * layout.slots);
  layout.occupied.assign(layout.rows * layout.slots, false);
  std::size_t base = 0;
  for (auto n : group_sizes) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = base + i;
      for (std::size_t k = 0; k < layout.slots; ++k) {
        const bool used = k < n;
        layout.neighbour[row * layout.slots + k] = used ? base + k : row;
        layout.occupied[row * layout.slots + k] = used;
      }
    }
    base += n;
  }
  return layout;
}

std::vector<double> SocialLayout::slot_mask(const std::vector<bool>& present) const {
  std::vector<double> mask(rows * slots, 0.0);
  for (std::size_t m = 0; m < rows; ++m) {
    for (std::size_t k = 0; k < slots; ++k) {
      const std::size_t idx = m * slots + k;
      const std::size_t j = neighbour[idx];
      if (occupied[idx] && (j == m || present[j])) mask[idx] = 1.0;
    }
  }
  return mask;
}

std::vector<double> compute_subgoal(std::span<const double> x_abs, const Matrix& pattern) {
  if (pattern.cols != x_abs.size()) throw ShapeError("compute_subgoal: pattern width does not match position");
  std::vector<double> g(x_abs.begin(), x_abs.end());
  for (std::size_t k = 0; k < pattern.rows; ++k)
    for (std::size_t d = 0; d < pattern.cols; ++d) g[d] += pattern(k, d);
  return g;
}

SocialInfluenceSet compute_social_influences(const Matrix& x_abs_all, const Matrix& subgoals,
                                             const std::vector<bool>& present, std::size_t i) {
  const std::size_t N = x_abs_all.rows;
  if (i >= N) throw std::out_of_range("compute_social_influences: agent index out of range");
  if (subgoals.rows != N || subgoals.cols != x_abs_all.cols || present.size() != N) {
    throw ShapeError("compute_social_influences: inconsistent agent counts");
  }
  SocialInfluenceSet out{Matrix(N, x_abs_all.cols), std::vector<bool>(N, false)};
  for (std::size_t j = 0; j < N; ++j) {
    if (!present[j] && j != i) continue;
    out.valid[j] = true;
    for (std::size_t d = 0; d < x_abs_all.cols; ++d) out.rows(j, d) = subgoals(j, d) - x_abs_all(i, d);
  }
  return out;
}

Tensor compute_subgoals(const Tensor& positions, const Tensor& patterns, std::size_t P) {
  const std::size_t D = positions.dim(1);
  if (patterns.dim(1) != P * D || patterns.dim(0) != positions.dim(0)) {
    throw ShapeError("compute_subgoals: patterns " + shape_str(patterns.shape()) + " vs positions " +
                     shape_str(positions.shape()));
  }
  std::vector<double> summer(P * D * D, 0.0);
  for (std::size_t k = 0; k < P; ++k)
    for (std::size_t d = 0; d < D; ++d) summer[(k * D + d) * D + d] = 1.0;
  return add(positions, matmul(patterns, Tensor({P * D, D}, std::move(summer))));
}

Tensor social_influence_rows(const Tensor& positions, const Tensor& subgoals, const SocialLayout& layout) {
  std::vector<std::size_t> self(layout.rows * layout.slots);
  for (std::size_t m = 0; m < layout.rows; ++m)
    for (std::size_t k = 0; k < layout.slots; ++k) self[m * layout.slots + k] = m;
  return sub(gather_rows(subgoals, layout.neighbour), gather_rows(positions, self));
}

ContextModule::ContextModule(const ContextConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto& c = config_;
  if (!c.uses_patterns()) return;
  f_p_ = Mlp(store, prefix + ".f_p", c.P * c.D, c.mlp_hidden, c.d_p, c.mlp_depth, false, rng);
  pattern_net_ = Mlp(store, prefix + ".pattern_net", c.d_c() + c.d_h, c.mlp_hidden, c.P * c.D, c.mlp_depth, false, rng);
  if (!c.uses_social()) return;
  f_s_ = Mlp(store, prefix + ".f_s", c.D, c.mlp_hidden, c.d_s, c.mlp_depth, false, rng);
  if (!c.uses_attention()) return;
  query_ = Linear(store, prefix + ".attention.query", c.d_s, c.d_s, rng);
  key_ = Linear(store, prefix + ".attention.key", c.d_s, c.d_s, rng);
  value_ = Linear(store, prefix + ".attention.value", c.d_s, c.d_s, rng);
  output_ = Linear(store, prefix + ".attention.output", c.d_s, c.d_s, rng);
}

Tensor ContextModule::extract_pattern_feature(const Tensor& patterns) const {
  if (!config_.uses_patterns()) throw std::logic_error("context: pattern feature requested in vrnn mode");
  return f_p_(patterns);
}

Tensor ContextModule::predict_pattern(const Tensor& context_prev, const Tensor& h_prev) const {
  if (!config_.uses_patterns()) throw std::logic_error("context: pattern prediction requested in vrnn mode");
  return pattern_net_(concat({context_prev, h_prev}, 1));
}

Tensor ContextModule::interaction_attend(const Tensor& influences, std::span<const double> slot_mask, std::size_t slots,
                                         std::vector<Tensor>* attention) const {
  if (!config_.uses_social()) throw std::logic_error("context: social feature requested without social mode");
  const std::size_t total = influences.dim(0);
  if (slots == 0 || total % slots != 0 || slot_mask.size() != total) {
    throw ShapeError("interaction_attend: " + std::to_string(total) + " influence rows do not fit " +
                     std::to_string(slots) + " slots");
  }
  const std::size_t rows = total / slots;
  const std::size_t ds = config_.d_s;

  std::vector<double> pool(total, 0.0);
  for (std::size_t m = 0; m < rows; ++m) {
    double count = 0.0;
    for (std::size_t k = 0; k < slots; ++k) count += slot_mask[m * slots + k];
    if (count == 0.0) throw DomainError("interaction_attend: every influence row of agent " + std::to_string(m) + " is masked");
    for (std::size_t k = 0; k < slots; ++k) pool[m * slots + k] = slot_mask[m * slots + k] / count;
  }
  const Tensor pool_weights({rows, 1, slots}, std::move(pool));

  const Tensor embedded = f_s_(influences);  // [rows*slots, d_s]
  Tensor mixed = embedded;
  if (config_.uses_attention()) {
    const std::size_t heads = config_.heads;
    const std::size_t dh = ds / heads;
    const Tensor q = reshape(query_(embedded), {rows, slots, ds});
    const Tensor k = reshape(key_(embedded), {rows, slots, ds});
    const Tensor v = reshape(value_(embedded), {rows, slots, ds});
    std::vector<double> key_mask(rows * slots * slots);
    for (std::size_t m = 0; m < rows; ++m)
      for (std::size_t a = 0; a < slots; ++a)
        for (std::size_t b = 0; b < slots; ++b) key_mask[(m * slots + a) * slots + b] = slot_mask[m * slots + b];
    const Tensor mask({rows, slots, slots}, std::move(key_mask));
    const double temperature = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = slice(q, 2, h * dh, dh);
      const Tensor kh = slice(k, 2, h * dh, dh);
      const Tensor vh = slice(v, 2, h * dh, dh);
      const Tensor weights = masked_softmax(scale(matmul(qh, transpose(kh)), temperature), mask);
      if (attention) attention->push_back(weights);
      outs.push_back(matmul(weights, vh));
    }
    const Tensor joined = heads == 1 ? outs.front() : concat(outs, 2);
    mixed = output_(reshape(joined, {total, ds}));
  }
  return reshape(matmul(pool_weights, reshape(mixed, {rows, slots, ds})), {rows, ds});
}

ContextFeature ContextModule::build_context(const Tensor& pattern_feature, const Tensor& social_feature) const {
  ContextFeature out;
  if (config_.uses_patterns()) out.pattern_feature = pattern_feature;
  if (config_.uses_social()) out.social_feature = social_feature;
  std::vector<Tensor> parts;
  if (out.pattern_feature.defined()) parts.push_back(out.pattern_feature);
  if (out.social_feature.defined()) parts.push_back(out.social_feature);
  if (parts.size() == 1) out.combined = parts.front();
  if (parts.size() == 2) out.combined = concat(parts, 1);
  return out;
}

}  // namespace sprnn
