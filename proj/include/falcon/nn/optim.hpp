#pragma once

#include "falcon/nn/layers.hpp"

#include <vector>

namespace falcon::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
  double max_grad_norm = 0.0;  // 0 disables clipping
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig config);

  // Applies one update from the accumulated gradients. Parameters without a
  // gradient or with requires_grad off are left bit-identical.
  void step();
  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  // Global L2 norm of the gradients seen by the last step (before clipping).
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig config_;
  long step_count_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace falcon::nn
