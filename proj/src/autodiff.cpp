#include "sprnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <unordered_set>

namespace sprnn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local int no_grad_depth = 0;
// Running hash of the branch taken at every ReLU/clamp breakpoint; null when off.
thread_local std::uint64_t* branch_signature = nullptr;

void record_branch(std::uint64_t branch) {
  std::uint64_t& h = *branch_signature;
  h = (h ^ branch) * 0x100000001b3ULL;
  h ^= h >> 29;
}

struct CorruptionHook {
  std::string op;
  double factor = 1.0;
};
CorruptionHook corruption;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

const std::vector<double>& val(const detail::Node& self, std::size_t k) {
  return self.inputs[k]->value;
}

bool wants(const detail::Node& self, std::size_t k) { return self.inputs[k]->requires_grad; }

std::vector<double>& gbuf(detail::Node& self, std::size_t k) {
  return self.inputs[k]->grad_buffer();
}

// Number of leading repetitions of b inside a, or 0 when not broadcastable.
std::size_t broadcast_repeat(const Shape& a, const Shape& b) {
  if (a == b) return 1;
  if (b.size() + 1 == a.size() && std::equal(b.begin(), b.end(), a.begin() + 1)) return a[0];
  return 0;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* dc, const double* b,
             double* da) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* dc,
             double* db) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
    }
  }
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op_result(op, a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
    const auto& xin = val(self, 0);
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(data))) {
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw GraphError("tensor: use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("tensor: axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  shape();
  if (!node_->is_leaf) throw GraphError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor: gradient has not been populated");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  shape();
  node_->grad.assign(node_->value.size(), 0.0);
}

bool Tensor::is_leaf() const { return shape(), node_->is_leaf; }
const char* Tensor::op_name() const { return shape(), node_->op; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

void set_backward_corruption(const std::string& op_name, double factor) {
  corruption.op = op_name;
  corruption.factor = op_name.empty() ? 1.0 : factor;
}

double backward_factor(const char* op) {
  if (!corruption.op.empty() && corruption.op == op) return corruption.factor;
  return 1.0;
}

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward_fn) {
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() == 2 && sb.size() == 2) {
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) shape_fail("matmul", sa, sb);
    std::vector<double> out(m * n, 0.0);
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    return make_op_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
      if (wants(self, 0)) gemm_nt(m, k, n, self.grad.data(), val(self, 1).data(), gbuf(self, 0).data());
      if (wants(self, 1)) gemm_tn(m, k, n, val(self, 0).data(), self.grad.data(), gbuf(self, 1).data());
    });
  }
  if (sa.size() == 3 && (sb.size() == 3 || sb.size() == 2)) {
    const bool shared = sb.size() == 2;
    const std::size_t batch = sa[0], m = sa[1], k = sa[2];
    const std::size_t kb = shared ? sb[0] : sb[1];
    const std::size_t n = shared ? sb[1] : sb[2];
    if (kb != k || (!shared && sb[0] != batch)) shape_fail("matmul", sa, sb);
    std::vector<double> out(batch * m * n, 0.0);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
      gemm_nn(m, k, n, ap + i * m * k, bp + (shared ? 0 : i * k * n), out.data() + i * m * n);
    }
    return make_op_result("matmul", {batch, m, n}, std::move(out), {a, b},
                          [batch, m, k, n, shared](detail::Node& self) {
                            const double* av = val(self, 0).data();
                            const double* bv = val(self, 1).data();
                            for (std::size_t i = 0; i < batch; ++i) {
                              const double* g = self.grad.data() + i * m * n;
                              const std::size_t boff = shared ? 0 : i * k * n;
                              if (wants(self, 0)) gemm_nt(m, k, n, g, bv + boff, gbuf(self, 0).data() + i * m * k);
                              if (wants(self, 1)) gemm_tn(m, k, n, av + i * m * k, g, gbuf(self, 1).data() + boff);
                            }
                          });
  }
  shape_fail("matmul", sa, sb);
}

Tensor transpose(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(s));
  const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  const std::size_t batch = a.numel() / std::max<std::size_t>(1, m * n);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
  return make_op_result("transpose", out_shape, std::move(out), {a}, [batch, m, n](detail::Node& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

Tensor add(const Tensor& a, const Tensor& b) {
  const auto rep = broadcast_repeat(a.shape(), b.shape());
  if (rep == 0) shape_fail("add", a.shape(), b.shape());
  const auto x = a.data(), y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % nb];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [nb](detail::Node& self) {
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto rep = broadcast_repeat(a.shape(), b.shape());
  if (rep == 0) shape_fail("sub", a.shape(), b.shape());
  const auto x = a.data(), y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % nb];
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [nb](detail::Node& self) {
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto rep = broadcast_repeat(a.shape(), b.shape());
  if (rep == 0) shape_fail("mul", a.shape(), b.shape());
  const auto x = a.data(), y = b.data();
  const std::size_t nb = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % nb];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [nb](detail::Node& self) {
    const auto& xv = val(self, 0);
    const auto& yv = val(self, 1);
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * yv[i % nb];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * xv[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& a, double offset) {
  return unary("shift", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * w, w, out.data() + o * out_row + offset);
    widths.push_back(w);
    offset += w;
  }
  return make_op_result("concat", out_shape, std::move(out), parts,
                        [widths, outer, out_row](detail::Node& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            const std::size_t w = widths[k];
                            if (wants(self, k)) {
                              auto& g = gbuf(self, k);
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * out_row + off + j];
                            }
                            off += w;
                          }
                        });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner, w = length * inner, off = start * inner;
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(outer * w);
  const auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data() + o * in_row + off, w, out.data() + o * w);
  return make_op_result("slice", out_shape, std::move(out), {a}, [outer, in_row, w, off](detail::Node& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) g[o * in_row + off + j] += self.grad[o * w + j];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const auto& s = a.shape();
  if (s.size() != 2) throw ShapeError("gather_rows: needs rank 2, got " + shape_str(s));
  const std::size_t cols = s[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * cols);
  const auto x = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= s[0]) throw ShapeError("gather_rows: row index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(x.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  const std::size_t n = idx.size();
  return make_op_result("gather_rows", {n, cols}, std::move(out), {a},
                        [idx = std::move(idx), cols](detail::Node& self) {
                          auto& g = gbuf(self, 0);
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t c = 0; c < cols; ++c) g[idx[r] * cols + c] += self.grad[r * cols + c];
                        });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) {
                 if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  if (branch_signature)
    for (double x : a.data()) record_branch(x > 0 ? 1 : 2);
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0)) throw DomainError("log: non-positive input " + std::to_string(x));
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (branch_signature)
    for (double x : a.data()) record_branch(x < lo ? 3 : (x > hi ? 4 : 5));
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax

namespace {

void softmax_backward(detail::Node& self, std::size_t width) {
  auto& g = gbuf(self, 0);
  const std::size_t rows = self.value.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* y = self.value.data() + r * width;
    const double* dy = self.grad.data() + r * width;
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) dot += dy[j] * y[j];
    for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (dy[j] - dot);
  }
}

}  // namespace

Tensor softmax(const Tensor& a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("softmax: needs rank >= 1");
  const std::size_t width = s.back();
  const std::size_t rows = a.numel() / width;
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * width;
    const double mx = *std::max_element(xr, xr + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += out[r * width + j] = std::exp(xr[j] - mx);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] /= total;
  }
  return make_op_result("softmax", s, std::move(out), {a},
                        [width](detail::Node& self) { softmax_backward(self, width); });
}

Tensor masked_softmax(const Tensor& a, const Tensor& mask) {
  const auto& s = a.shape();
  if (s.empty() || mask.shape() != s) shape_fail("masked_softmax", s, mask.shape());
  const std::size_t width = s.back();
  const std::size_t rows = a.numel() / width;
  const auto x = a.data();
  const auto m = mask.data();
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t live = 0;
    for (std::size_t j = 0; j < width; ++j) {
      if (m[r * width + j] == 0.0) continue;
      ++live;
      const double v = x[r * width + j];
      mx = std::isnan(v) || std::isnan(mx) ? std::numeric_limits<double>::quiet_NaN() : std::max(mx, v);
    }
    if (live == 0) throw DomainError("masked_softmax: row " + std::to_string(r) + " has every entry masked");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j)
      if (m[r * width + j] != 0.0) total += out[r * width + j] = std::exp(x[r * width + j] - mx);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] /= total;
  }
  return make_op_result("masked_softmax", s, std::move(out), {a},
                        [width](detail::Node& self) { softmax_backward(self, width); });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  return make_op_result("sum", {}, {total}, {a}, [](detail::Node& self) {
    auto& g = gbuf(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (double x : a.data()) total += x;
  return make_op_result("mean", {}, {total / static_cast<double>(n)}, {a}, [n](detail::Node& self) {
    auto& g = gbuf(self, 0);
    const double d = self.grad[0] / static_cast<double>(n);
    for (auto& v : g) v += d;
  });
}

Tensor sum_last(const Tensor& a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("sum_last: needs rank >= 1");
  const std::size_t width = s.back();
  const std::size_t rows = a.numel() / std::max<std::size_t>(width, 1);
  Shape out_shape(s.begin(), s.end() - 1);
  std::vector<double> out(rows, 0.0);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r] += x[r * width + j];
  return make_op_result("sum_last", out_shape, std::move(out), {a}, [width](detail::Node& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / width];
  });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw GraphError("backward: undefined loss");
  if (loss.numel() != 1 || !loss.shape().empty()) {
    throw GraphError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (root->consumed) throw GraphError("backward: graph already traversed; rebuild it before calling again");
  if (!root->requires_grad) return;
  if (root->is_leaf) {
    root->grad_buffer()[0] += 1.0;
    return;
  }

  // Iterative post-order DFS gives a topological order of interior nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) node->grad.assign(node->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->consumed) throw GraphError("backward: graph already traversed; rebuild it before calling again");
    const double f = backward_factor(node->op);
    if (f != 1.0)
      for (auto& g : node->grad) g *= f;
    node->backward_fn(*node);
  }
  for (auto* node : order) {
    node->backward_fn = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// ParameterStore

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  if (entries_.count(name)) throw std::invalid_argument("ParameterStore: duplicate name " + name);
  if (!value.is_leaf()) value = value.detach();
  value.set_requires_grad(true);
  return entries_.emplace(name, std::move(value)).first->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe probe_loss(const std::function<Tensor()>& loss_fn) {
  std::uint64_t signature = 0xcbf29ce484222325ULL;
  branch_signature = &signature;
  double value = 0.0;
  try {
    value = loss_fn().item();
  } catch (...) {
    branch_signature = nullptr;
    throw;
  }
  branch_signature = nullptr;
  return {value, signature};
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn, ParameterStore& params,
                                        double eps, FdScheme scheme) {
  if (!(eps > 0)) throw std::invalid_argument("finite_difference_check: eps must be positive");
  params.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw DomainError("finite_difference_check: loss is not finite");
  backward(loss);

  GradCheckResult result;
  NoGradGuard no_grad;
  const std::uint64_t base = probe_loss(loss_fn).signature;
  for (auto& [name, tensor] : params) {
    auto values = tensor.mutable_data();
    const auto analytic = tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      // Shrink the step until neither probe crosses a breakpoint.
      std::optional<double> numeric;
      for (double step = eps; step >= eps * 1e-3 && !numeric; step /= 10.0) {
        const std::size_t reach = scheme == FdScheme::richardson ? 2 : 1;
        double diff[3] = {0.0, 0.0, 0.0};
        bool clean = true;
        for (std::size_t m = 1; m <= reach && clean; ++m) {
          values[i] = saved + static_cast<double>(m) * step;
          const Probe up = probe_loss(loss_fn);
          values[i] = saved - static_cast<double>(m) * step;
          const Probe down = probe_loss(loss_fn);
          values[i] = saved;
          if (!std::isfinite(up.value) || !std::isfinite(down.value)) {
            throw DomainError("finite_difference_check: loss is not finite near " + name);
          }
          clean = up.signature == base && down.signature == base;
          diff[m] = (up.value - down.value) / (2.0 * static_cast<double>(m) * step);
        }
        if (!clean) continue;
        numeric = reach == 1 ? diff[1] : (4.0 * diff[1] - diff[2]) / 3.0;
      }
      if (!numeric) {
        ++result.skipped;
        continue;
      }
      const double a = analytic[i];
      const double err = std::abs(a - *numeric) / std::max(1e-8, std::abs(a) + std::abs(*numeric));
      ++result.checked;
      if (err >= result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = *numeric;
      }
    }
  }
  return result;
}

}  // namespace sprnn
