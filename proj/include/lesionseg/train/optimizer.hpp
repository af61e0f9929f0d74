#pragma once

#include <cmath>
#include <vector>

#include "lesionseg/autograd.hpp"

namespace lesionseg {

// AdamW with decoupled weight decay: the decay term scales the weight
// directly by (1 - lr * wd) and never passes through the moment estimates.
template <typename S>
class AdamW {
 public:
  explicit AdamW(std::vector<Param<S>*> params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }

  // Global-norm gradient clipping; returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    double sq = 0;
    for (auto* p : params_)
      for (int64_t i = 0; i < p->grad.numel(); ++i)
        sq += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      const S scale = static_cast<S>(max_norm / norm);
      for (auto* p : params_)
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
    }
    return norm;
  }

  void step(double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t j = 0; j < params_.size(); ++j) {
      Param<S>& p = *params_[j];
      Tensor<S>& m = m_[j];
      Tensor<S>& v = v_[j];
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i];
        m[i] = static_cast<S>(beta1_ * m[i] + (1.0 - beta1_) * g);
        v[i] = static_cast<S>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double w = p.value[i];
        w -= lr * weight_decay * w;  // decoupled decay
        w -= lr * mhat / (std::sqrt(vhat) + eps_);
        p.value[i] = static_cast<S>(w);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<Tensor<S>>& moments1() { return m_; }
  std::vector<Tensor<S>>& moments2() { return v_; }
  const std::vector<Param<S>*>& params() const { return params_; }

 private:
  std::vector<Param<S>*> params_;
  std::vector<Tensor<S>> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace lesionseg
