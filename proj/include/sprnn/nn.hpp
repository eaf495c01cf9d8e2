#pragma once

#include <string>
#include <vector>

#include "sprnn/autodiff.hpp"
#include "sprnn/rng.hpp"

namespace sprnn {

// y = x W + b with W stored as [in, out]. Accepts rank-2 input [rows, in].
// W and b start uniform in +-1/sqrt(in).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

// Stack of `depth` linear layers with ReLU between them. The last layer is
// linear unless `activate_output` is set.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      std::size_t depth, bool activate_output, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  std::vector<Linear>& layers() { return layers_; }
  std::size_t out() const { return layers_.empty() ? 0 : layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
  bool activate_output_ = false;
};

struct GaussianParams {
  Tensor mu;
  Tensor logvar;
};

// ReLU trunk of depth-1 layers followed by linear mean and log-variance
// heads. Log-variance is clamped to [-clamp, clamp].
class GaussianHead {
 public:
  GaussianHead() = default;
  GaussianHead(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
               std::size_t depth, double logvar_clamp, Rng& rng);

  GaussianParams operator()(const Tensor& x) const;
  Linear& mu_head() { return mu_; }
  Linear& logvar_head() { return logvar_; }

 private:
  Mlp trunk_;
  bool has_trunk_ = false;
  Linear mu_;
  Linear logvar_;
  double clamp_ = 10.0;
};

// Single-layer gated recurrent unit:
//   r = sigmoid(x Wxr + bxr + h Whr + bhr)
//   u = sigmoid(x Wxu + bxu + h Whu + bhu)
//   n = tanh(x Wxn + bxn + r * (h Whn + bhn))
//   h' = (1 - u) * n + u * h
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);

  Tensor operator()(const Tensor& x, const Tensor& h) const;
  std::size_t hidden() const { return hidden_; }

 private:
  Linear input_;   // in -> 3*hidden (reset, update, candidate)
  Linear state_;   // hidden -> 3*hidden
  std::size_t hidden_ = 0;
};

}  // namespace sprnn
