#include "optim.hpp"

#include <cmath>

#include "error.hpp"

namespace mitodet {

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) fail(ErrorCode::InvalidArgument, "lr_at_epoch: epoch must be >= 0");
  if (!(schedule.initial_lr > 0.0) || !(schedule.gamma > 0.0 && schedule.gamma < 1.0) ||
      schedule.step_epochs <= 0) {
    fail(ErrorCode::InvalidArgument, "lr_at_epoch: invalid schedule");
  }
  double lr = schedule.initial_lr;
  for (int k = 0; k < epoch / schedule.step_epochs; ++k) lr *= schedule.gamma;
  return lr;
}

Sgd::Sgd(nn::ParamSet& params, double momentum, double weight_decay)
    : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_.items()) velocity_.emplace_back(p.var->value.shape(), 0.0);
}

double Sgd::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_.items()) {
    for (double g : p.var->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) fail(ErrorCode::Numeric, "non-finite gradient");
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params_.items()) {
      for (double& g : p.var->grad.values()) g *= scale;
    }
  }
  return norm;
}

void Sgd::step(double lr) {
  auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    nn::Tensor& w = items[i].var->value;
    const nn::Tensor& g = items[i].var->grad;
    nn::Tensor& v = velocity_[i];
    const bool has_grad = g.size() == w.size();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = (has_grad ? g[j] : 0.0) + weight_decay_ * w[j];
      v[j] = momentum_ * v[j] + gj;
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace mitodet
