#pragma once

#include <vector>

#include "nn.hpp"

namespace mitodet {

// Step decay: initial_lr * gamma^floor(epoch / step_epochs).
struct LrSchedule {
  double initial_lr = 1e-4;
  double gamma = 0.7;
  int step_epochs = 30;
};

double lr_at_epoch(const LrSchedule& schedule, int epoch);

// SGD with classical momentum, v <- mu*v + g + wd*w; w <- w - lr*v.
class Sgd {
 public:
  Sgd(nn::ParamSet& params, double momentum, double weight_decay = 0.0);

  // Rescales the gradient to at most max_norm (if positive). Returns the norm
  // before clipping.
  double clip_grad_norm(double max_norm);
  void step(double lr);

 private:
  nn::ParamSet& params_;
  double momentum_;
  double weight_decay_;
  std::vector<nn::Tensor> velocity_;
};

}  // namespace mitodet
