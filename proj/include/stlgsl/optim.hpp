#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stlgsl/tensor.hpp"

namespace stlgsl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay: theta <- theta - lr*wd*theta - lr*m_hat/(sqrt(v_hat)+eps).
/// Moments are created lazily on the first step and bound to parameter order.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace stlgsl
