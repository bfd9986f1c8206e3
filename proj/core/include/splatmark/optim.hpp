#pragma once

#include <cstdint>
#include <vector>

#include "splatmark/autodiff.hpp"

namespace splatmark {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 decay: weight_decay * value is added to the gradient.
  double weight_decay = 1e-6;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter from its accumulated grad. Moments are
  /// created lazily in parameter order on the first step.
  void step(std::vector<ad::Parameter>& params);
  void step(std::vector<ad::Parameter*> params);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return t_; }

  // Resume support.
  const std::vector<ad::Matrix>& first_moments() const { return m_; }
  const std::vector<ad::Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<ad::Matrix> m, std::vector<ad::Matrix> v);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
};

}  // namespace splatmark
