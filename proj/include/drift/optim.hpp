#pragma once

// AdamW over graph leaves. weight_decay = 0 gives plain Adam.

#include "drift/tensor.hpp"

namespace drift {

class AdamW {
 public:
  explicit AdamW(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : params_(std::move(params)),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].value().size(), 0.0);
      v_[i].assign(params_[i].value().size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].raw();
      const auto& g = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t k = 0; k < val.size(); ++k) {
        if (weight_decay_ != 0.0) val[k] -= lr_ * weight_decay_ * val[k];
        m[k] = beta1_ * m[k] + (1 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1 - beta2_) * g[k] * g[k];
        val[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Tensor>& params() const { return params_; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace drift
