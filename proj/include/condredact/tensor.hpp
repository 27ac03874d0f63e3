#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace condredact {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Thread-local switch that disables tape recording. Forward values are still
// computed; the result tensors are plain constants.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents

  std::size_t numel() const { return value.size(); }
  void ensure_grad();
};

}  // namespace detail

// Dense row-major 64-bit tensor with reverse-mode differentiation. Values are
// immutable once an op has produced them; only leaf storage may be rewritten
// (optimizer updates, checkpoint loads) and only between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  bool is_scalar() const { return defined() && numel() == 1; }
  double value() const;  // scalar fetch
  double at(std::size_t flat_index) const;
  double at2(std::size_t row, std::size_t col) const;
  std::span<const double> values() const;
  std::vector<double> values_copy() const;

  // Leaf storage access for optimizers and loaders.
  std::vector<double>& mutable_values();

  bool requires_grad() const;
  // Gradient buffer; zeros when the leaf was never reached by backward.
  std::vector<double> grad() const;
  void zero_grad();

  Tensor detach() const;      // same values, constant leaf
  Tensor clone_leaf() const;  // deep copy as a fresh leaf, keeps requires_grad

  const char* op() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

enum class Primitive {
  matmul,
  add,
  subtract,
  scale,
  hadamard,
  concat_last_axis,
  tanh,
  relu,
  sigmoid,
  mean,
  sum,
  l2norm,
  squared_distance,
};

const char* primitive_name(Primitive op);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& factor, const Tensor& a);  // factor is 1-element
Tensor scale(double factor, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor concat_last_axis(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor l2norm(const Tensor& a);
Tensor squared_distance(const Tensor& a, const Tensor& b);

// Single dispatch entry matching the operation table above.
Tensor apply_primitive(Primitive op, const std::vector<Tensor>& inputs);

// Extension point for fused losses with hand-derived backward rules
// (e.g. the RBF-MMD training objective). The callback receives the output
// gradient and the parent nodes and must accumulate into parent->grad.
using CustomBackward =
    std::function<void(std::span<const double> out_grad,
                       const std::vector<detail::Node*>& parents)>;
Tensor make_custom_op(const char* name, const std::vector<Tensor>& inputs,
                      Shape out_shape, std::vector<double> out_values,
                      CustomBackward backward_rule);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively on
// every requires_grad leaf reachable from the loss.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double gradient_check(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x, double eps);

}  // namespace condredact
