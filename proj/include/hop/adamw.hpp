#pragma once

#include "hop/tensor.hpp"

namespace hop::grad {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
template <typename S>
class AdamW {
 public:
  AdamW(const std::vector<Tensor<S>>& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), S(0));
      v_.emplace_back(p.size(), S(0));
    }
  }

  void step(std::vector<Tensor<S>>& params) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (size_t k = 0; k < params.size(); ++k) {
      auto& node = *params[k].node();
      node.ensure_grad();
      for (size_t i = 0; i < node.value.size(); ++i) {
        const double g = double(node.grad[i]);
        m_[k][i] = S(cfg_.beta1 * double(m_[k][i]) + (1 - cfg_.beta1) * g);
        v_[k][i] = S(cfg_.beta2 * double(v_[k][i]) + (1 - cfg_.beta2) * g * g);
        const double m_hat = double(m_[k][i]) / bc1;
        const double v_hat = double(v_[k][i]) / bc2;
        node.value[i] =
            S(double(node.value[i]) -
              cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                         cfg_.weight_decay * double(node.value[i])));
      }
    }
  }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamWConfig cfg_;
  int64_t step_count_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace hop::grad
