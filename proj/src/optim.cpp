#include "condredact/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace condredact {

void Sgd::step() {
  for (auto& p : params_) {
    auto g = p.grad();
    auto& v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2,
           double eps)
    : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    v_[i].assign(params_[i].numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto& vals = params_[i].mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      vals[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind,
                                          std::vector<Tensor> params, double lr) {
  if (kind == "sgd") return std::make_unique<Sgd>(std::move(params), lr);
  if (kind == "adam") return std::make_unique<Adam>(std::move(params), lr);
  throw std::invalid_argument("unknown optimizer: " + kind);
}

}  // namespace condredact
