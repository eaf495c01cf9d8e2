#include "sprnn/nn.hpp"

#include <cmath>

namespace sprnn {

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  weight_ = store.add(name + ".weight", Tensor({in, out}, std::move(w)));
  std::vector<double> b(out);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  bias_ = store.add(name + ".bias", Tensor({out}, std::move(b)));
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight_), bias_); }

Mlp::Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
         std::size_t depth, bool activate_output, Rng& rng)
    : activate_output_(activate_output) {
  if (depth < 1) throw std::invalid_argument("Mlp: depth must be >= 1");
  std::size_t width = in;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t next = k + 1 == depth ? out : hidden;
    layers_.emplace_back(store, name + "." + std::to_string(k), width, next, rng);
    width = next;
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor y = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    y = layers_[k](y);
    if (k + 1 < layers_.size() || activate_output_) y = relu(y);
  }
  return y;
}

GaussianHead::GaussianHead(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                           std::size_t out, std::size_t depth, double logvar_clamp, Rng& rng)
    : clamp_(logvar_clamp) {
  std::size_t width = in;
  if (depth > 1) {
    trunk_ = Mlp(store, name + ".trunk", in, hidden, hidden, depth - 1, true, rng);
    has_trunk_ = true;
    width = hidden;
  }
  mu_ = Linear(store, name + ".mu", width, out, rng);
  logvar_ = Linear(store, name + ".logvar", width, out, rng);
}

GaussianParams GaussianHead::operator()(const Tensor& x) const {
  const Tensor feature = has_trunk_ ? trunk_(x) : x;
  return {mu_(feature), clamp(logvar_(feature), -clamp_, clamp_)};
}

GruCell::GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng)
    : input_(store, name + ".input", in, 3 * hidden, rng),
      state_(store, name + ".state", hidden, 3 * hidden, rng),
      hidden_(hidden) {}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  const Tensor gx = input_(x);
  const Tensor gh = state_(h);
  const std::size_t H = hidden_;
  const Tensor reset = sigmoid(add(slice(gx, 1, 0, H), slice(gh, 1, 0, H)));
  const Tensor update = sigmoid(add(slice(gx, 1, H, H), slice(gh, 1, H, H)));
  const Tensor candidate = tanh(add(slice(gx, 1, 2 * H, H), mul(reset, slice(gh, 1, 2 * H, H))));
  // (1 - u) * n + u * h  ==  n + u * (h - n)
  return add(candidate, mul(update, sub(h, candidate)));
}

}  // namespace sprnn
