#include "condredact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace condredact {

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void throw_shape_error(const char* op, const Shape& a,
                                    const Shape& b) {
  std::ostringstream msg;
  msg << op << ": shape mismatch (" << shape_to_string(a) << " vs "
      << shape_to_string(b) << ")";
  throw std::invalid_argument(msg.str());
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw std::invalid_argument(std::string(op) + ": undefined tensor input");
  }
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

void detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_numel(shape), fill);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument(
        "Tensor::from: " + std::to_string(values.size()) +
        " values do not fill shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::size_t Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }

double Tensor::value() const {
  if (!is_scalar()) {
    throw std::invalid_argument("Tensor::value: tensor with shape " +
                                shape_to_string(shape()) + " is not scalar");
  }
  return node_->value[0];
}

double Tensor::at(std::size_t flat_index) const {
  return node_->value.at(flat_index);
}

double Tensor::at2(std::size_t row, std::size_t col) const {
  if (node_->shape.size() != 2) {
    throw std::invalid_argument("Tensor::at2: tensor is not 2-D");
  }
  return node_->value.at(row * node_->shape[1] + col);
}

std::span<const double> Tensor::values() const {
  return {node_->value.data(), node_->value.size()};
}

std::vector<double> Tensor::values_copy() const { return node_->value; }

std::vector<double>& Tensor::mutable_values() {
  if (node_->op != std::string("leaf")) {
    throw std::logic_error("mutable_values: only leaf tensors may be written");
  }
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double> Tensor::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return std::vector<double>(node_->value.size(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const {
  return from(node_->shape, node_->value, false);
}

Tensor Tensor::clone_leaf() const {
  return from(node_->shape, node_->value, node_->requires_grad);
}

const char* Tensor::op() const { return node_->op; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

// ---------------------------------------------------------------------------
// Op construction helpers
// ---------------------------------------------------------------------------

namespace {

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

// Creates the result node; attaches parents and the backward rule only when
// the tape is live and some input needs gradients.
Tensor make_result(const char* op, const std::vector<Tensor>& inputs,
                   Shape shape, std::vector<double> value,
                   const std::function<std::function<void()>(
                       detail::Node* self,
                       std::vector<detail::Node*> parents)>& bind_backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (GradMode::enabled() && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    std::vector<detail::Node*> raw;
    raw.reserve(inputs.size());
    for (const auto& t : inputs) {
      node->parents.push_back(t.node());
      raw.push_back(t.node().get());
    }
    node->backprop = bind_backward(node.get(), std::move(raw));
  }
  return Tensor::wrap(std::move(node));
}

Tensor elementwise_unary(const char* op, const Tensor& a,
                         double (*fwd)(double), double (*dfdy)(double, double)) {
  require_defined(a, op);
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(
      op, {a}, a.shape(), std::move(out),
      [dfdy](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents, dfdy]() {
          detail::Node* p = parents[0];
          if (!p->requires_grad) return;
          p->ensure_grad();
          for (std::size_t i = 0; i < self->value.size(); ++i) {
            p->grad[i] += self->grad[i] * dfdy(p->value[i], self->value[i]);
          }
        };
      });
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool vec_rhs = sb.size() == 1;
  if (sa.size() != 2 || (sb.size() != 2 && sb.size() != 1) ||
      sa[1] != sb[0]) {
    throw_shape_error("matmul", sa, sb);
  }
  const std::size_t m = sa[0];
  const std::size_t n = sa[1];
  const std::size_t p = vec_rhs ? 1 : sb[1];
  std::vector<double> out(m * p, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) {
        out[i * p + j] += aik * bv[k * p + j];
      }
    }
  }
  Shape out_shape = vec_rhs ? Shape{m} : Shape{m, p};
  return make_result(
      "matmul", {a, b}, std::move(out_shape), std::move(out),
      [m, n, p](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents, m, n, p]() {
          detail::Node* pa = parents[0];
          detail::Node* pb = parents[1];
          const auto& g = self->grad;
          if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t k = 0; k < n; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < p; ++j) {
                  acc += g[i * p + j] * pb->value[k * p + j];
                }
                pa->grad[i * n + k] += acc;
              }
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            // dB = A^T * G
            for (std::size_t k = 0; k < n; ++k) {
              for (std::size_t j = 0; j < p; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                  acc += pa->value[i * n + k] * g[i * p + j];
                }
                pb->grad[k * p + j] += acc;
              }
            }
          }
        };
      });
}

namespace {

Tensor add_like(const char* op, const Tensor& a, const Tensor& b, double sign) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[i];
  return make_result(
      op, {a, b}, a.shape(), std::move(out),
      [sign](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents, sign]() {
          for (int which = 0; which < 2; ++which) {
            detail::Node* parent = parents[which];
            if (!parent->requires_grad) continue;
            parent->ensure_grad();
            const double w = which == 0 ? 1.0 : sign;
            for (std::size_t i = 0; i < self->value.size(); ++i) {
              parent->grad[i] += w * self->grad[i];
            }
          }
        };
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like("add", a, b, 1.0); }

Tensor subtract(const Tensor& a, const Tensor& b) {
  return add_like("subtract", a, b, -1.0);
}

Tensor scale(const Tensor& factor, const Tensor& a) {
  require_defined(factor, "scale");
  require_defined(a, "scale");
  if (!factor.is_scalar()) {
    throw_shape_error("scale", factor.shape(), a.shape());
  }
  const double f = factor.at(0);
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * av[i];
  return make_result(
      "scale", {factor, a}, a.shape(), std::move(out),
      [](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents]() {
          detail::Node* pf = parents[0];
          detail::Node* pa = parents[1];
          if (pf->requires_grad) {
            pf->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self->value.size(); ++i) {
              acc += self->grad[i] * pa->value[i];
            }
            pf->grad[0] += acc;
          }
          if (pa->requires_grad) {
            pa->ensure_grad();
            const double f = pf->value[0];
            for (std::size_t i = 0; i < self->value.size(); ++i) {
              pa->grad[i] += f * self->grad[i];
            }
          }
        };
      });
}

Tensor scale(double factor, const Tensor& a) {
  return scale(Tensor::scalar(factor), a);
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_defined(a, "hadamard");
  require_defined(b, "hadamard");
  if (a.shape() != b.shape()) throw_shape_error("hadamard", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(
      "hadamard", {a, b}, a.shape(), std::move(out),
      [](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents]() {
          detail::Node* pa = parents[0];
          detail::Node* pb = parents[1];
          if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self->value.size(); ++i) {
              pa->grad[i] += self->grad[i] * pb->value[i];
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->value.size(); ++i) {
              pb->grad[i] += self->grad[i] * pa->value[i];
            }
          }
        };
      });
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat-last-axis");
  require_defined(b, "concat-last-axis");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() ||
      !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw_shape_error("concat-last-axis", sa, sb);
  }
  const std::size_t la = sa.back();
  const std::size_t lb = sb.back();
  const std::size_t rows = a.numel() / la;
  Shape out_shape = sa;
  out_shape.back() = la + lb;
  std::vector<double> out(rows * (la + lb));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * la, la, out.data() + r * (la + lb));
    std::copy_n(bv.data() + r * lb, lb, out.data() + r * (la + lb) + la);
  }
  return make_result(
      "concat-last-axis", {a, b}, std::move(out_shape), std::move(out),
      [rows, la, lb](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents, rows, la, lb]() {
          detail::Node* pa = parents[0];
          detail::Node* pb = parents[1];
          const std::size_t lo = la + lb;
          if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t i = 0; i < la; ++i) {
                pa->grad[r * la + i] += self->grad[r * lo + i];
              }
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t i = 0; i < lb; ++i) {
                pb->grad[r * lb + i] += self->grad[r * lo + la + i];
              }
            }
          }
        };
      });
}

Tensor tanh(const Tensor& a) {
  return elementwise_unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      // subgradient 0 at the kink
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise_unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

namespace {

Tensor reduce_all(const char* op, const Tensor& a, bool mean) {
  require_defined(a, op);
  auto av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  const double denom = mean ? static_cast<double>(a.numel()) : 1.0;
  return make_result(
      op, {a}, {1}, {acc / denom},
      [denom](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents, denom]() {
          detail::Node* p = parents[0];
          if (!p->requires_grad) return;
          p->ensure_grad();
          const double g = self->grad[0] / denom;
          for (double& gi : p->grad) gi += g;
        };
      });
}

}  // namespace

Tensor mean_all(const Tensor& a) { return reduce_all("mean", a, true); }
Tensor sum_all(const Tensor& a) { return reduce_all("sum", a, false); }

Tensor l2norm(const Tensor& a) {
  require_defined(a, "l2norm");
  auto av = a.values();
  double sq = 0.0;
  for (double v : av) sq += v * v;
  const double norm = std::sqrt(sq);
  return make_result(
      "l2norm", {a}, {1}, {norm},
      [](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents]() {
          detail::Node* p = parents[0];
          if (!p->requires_grad) return;
          p->ensure_grad();
          const double norm = self->value[0];
          if (norm == 0.0) return;  // gradient defined as 0 at the origin
          const double g = self->grad[0] / norm;
          for (std::size_t i = 0; i < p->value.size(); ++i) {
            p->grad[i] += g * p->value[i];
          }
        };
      });
}

Tensor squared_distance(const Tensor& a, const Tensor& b) {
  require_defined(a, "squared_distance");
  require_defined(b, "squared_distance");
  if (a.shape() != b.shape()) {
    throw_shape_error("squared_distance", a.shape(), b.shape());
  }
  auto av = a.values();
  auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  return make_result(
      "squared_distance", {a, b}, {1}, {acc},
      [](detail::Node* self, std::vector<detail::Node*> parents) {
        return [self, parents]() {
          detail::Node* pa = parents[0];
          detail::Node* pb = parents[1];
          const double g = self->grad[0];
          if (pa->requires_grad) pa->ensure_grad();
          if (pb->requires_grad) pb->ensure_grad();
          for (std::size_t i = 0; i < pa->value.size(); ++i) {
            const double d = 2.0 * (pa->value[i] - pb->value[i]) * g;
            if (pa->requires_grad) pa->grad[i] += d;
            if (pb->requires_grad) pb->grad[i] -= d;
          }
        };
      });
}

const char* primitive_name(Primitive op) {
  switch (op) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::subtract: return "subtract";
    case Primitive::scale: return "scale";
    case Primitive::hadamard: return "hadamard";
    case Primitive::concat_last_axis: return "concat-last-axis";
    case Primitive::tanh: return "tanh";
    case Primitive::relu: return "relu";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::mean: return "mean";
    case Primitive::sum: return "sum";
    case Primitive::l2norm: return "l2norm";
    case Primitive::squared_distance: return "squared_distance";
  }
  return "?";
}

Tensor apply_primitive(Primitive op, const std::vector<Tensor>& inputs) {
  auto expect = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(primitive_name(op)) +
                                  ": expected " + std::to_string(n) +
                                  " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Primitive::matmul: expect(2); return matmul(inputs[0], inputs[1]);
    case Primitive::add: expect(2); return add(inputs[0], inputs[1]);
    case Primitive::subtract: expect(2); return subtract(inputs[0], inputs[1]);
    case Primitive::scale: expect(2); return scale(inputs[0], inputs[1]);
    case Primitive::hadamard: expect(2); return hadamard(inputs[0], inputs[1]);
    case Primitive::concat_last_axis:
      expect(2);
      return concat_last_axis(inputs[0], inputs[1]);
    case Primitive::tanh: expect(1); return tanh(inputs[0]);
    case Primitive::relu: expect(1); return relu(inputs[0]);
    case Primitive::sigmoid: expect(1); return sigmoid(inputs[0]);
    case Primitive::mean: expect(1); return mean_all(inputs[0]);
    case Primitive::sum: expect(1); return sum_all(inputs[0]);
    case Primitive::l2norm: expect(1); return l2norm(inputs[0]);
    case Primitive::squared_distance:
      expect(2);
      return squared_distance(inputs[0], inputs[1]);
  }
  throw std::invalid_argument("apply_primitive: unknown op");
}

Tensor make_custom_op(const char* name, const std::vector<Tensor>& inputs,
                      Shape out_shape, std::vector<double> out_values,
                      CustomBackward backward_rule) {
  if (shape_numel(out_shape) != out_values.size()) {
    throw std::invalid_argument(std::string(name) +
                                ": output values do not fill declared shape");
  }
  return make_result(
      name, inputs, std::move(out_shape), std::move(out_values),
      [rule = std::move(backward_rule)](detail::Node* self,
                                        std::vector<detail::Node*> parents) {
        return [self, parents, rule]() {
          for (detail::Node* p : parents) {
            if (p->requires_grad) p->ensure_grad();
          }
          rule({self->grad.data(), self->grad.size()}, parents);
        };
      });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (!loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  detail::Node* root = loss.node().get();
  if (!root->requires_grad) return;  // constant loss, nothing to do

  // iterative DFS postorder = topological order with parents after children
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    node->ensure_grad();
    if (node->backprop) node->backprop();
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double gradient_check(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x, double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) {
    throw std::invalid_argument("gradient_check: eps must lie in [1e-8, 1e-4]");
  }
  Tensor probe = Tensor::from(x.shape(), x.values_copy(), true);
  Tensor y = f(probe);
  if (!y.is_scalar()) {
    throw std::invalid_argument("gradient_check: f must return a scalar");
  }
  if (!std::isfinite(y.value())) {
    throw std::runtime_error("gradient_check: f(x) is not finite");
  }
  backward(y);
  const std::vector<double> analytic = probe.grad();

  double worst = 0.0;
  std::vector<double> base = x.values_copy();
  NoGradGuard guard;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> bumped = base;
    bumped[i] = base[i] + eps;
    const double hi = f(Tensor::from(x.shape(), bumped)).value();
    bumped[i] = base[i] - eps;
    const double lo = f(Tensor::from(x.shape(), bumped)).value();
    const double central = (hi - lo) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace condredact
