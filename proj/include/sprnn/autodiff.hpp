#pragma once

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tensor is a cheap handle to a shared node. Operations on tensors that
// require gradients record their inputs and a backward rule in the node; the
// graph is the DAG reachable from a loss. backward() walks it once in reverse
// topological order and then releases it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sprnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Lazily allocated gradient buffer for accumulation.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of the values. Only meaningful for leaves (parameters,
  // inputs); mutating an interior node does not update its consumers.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  // Copy of the values with no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Test hook: scales the gradient emitted by every backward rule of the named
// operation. Used only to prove that gradient checking detects a corrupted
// rule. Passing an empty name clears the hook.
void set_backward_corruption(const std::string& op_name, double factor);

// ---------------------------------------------------------------------------
// Forward primitives.
//
// Binary elementwise ops accept either equal shapes or a right operand whose
// shape equals the left operand's shape without its leading dimension.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor shift(const Tensor& a, double offset);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // last two axes
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor softmax(const Tensor& a);  // last axis
// Softmax over the last axis restricted to entries where `mask` is nonzero.
// Masked entries get probability exactly 0. Every row needs one live entry.
Tensor masked_softmax(const Tensor& a, const Tensor& mask);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_last(const Tensor& a);  // reduce last axis

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Builds an output node. Exposed for fused operations defined elsewhere
// (loss kernels). The backward rule reads self.grad and accumulates into
// self.inputs[k]->grad_buffer() for inputs that require gradients.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward_fn);

// Scale applied by the corruption hook to gradients emitted by `op`.
double backward_factor(const char* op);

// ---------------------------------------------------------------------------

// Populates gradients of every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate; call zero_grad to reset. The graph is released
// afterwards, so a second call on the same loss throws.
void backward(const Tensor& loss);

class ParameterStore {
 public:
  // Registers a parameter under a unique hierarchical name.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  // Sets every gradient to an allocated zero buffer.
  void zero_grad();

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Tensor> entries_;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements whose every probe crossed a ReLU/clamp breakpoint
};

// Compares analytic gradients of `loss_fn` against central differences for
// every scalar in `params`. The relative error per element is
// |a - n| / max(1e-8, |a| + |n|). A probe pair that lands on a different side
// of any ReLU or clamp breakpoint than the unperturbed point is retried with a
// step ten times smaller, down to eps / 1000; elements that never get a clean
// pair are counted in `skipped` rather than compared.
enum class FdScheme {
  central,     // (f(x+h) - f(x-h)) / 2h
  richardson,  // (4 D(h) - D(2h)) / 3 from two central differences; O(h^4)
};

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        ParameterStore& params, double eps,
                                        FdScheme scheme = FdScheme::central);

}  // namespace sprnn
