#pragma once

#include <memory>
#include <string>
#include <vector>

#include "condredact/tensor.hpp"

namespace condredact {

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  const std::vector<Tensor>& params() const { return params_; }

 protected:
  std::vector<Tensor> params_;
};

class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double lr)
      : Optimizer(std::move(params)), lr_(lr) {}
  void step() override;

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step() override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind,
                                          std::vector<Tensor> params, double lr);

}  // namespace condredact
