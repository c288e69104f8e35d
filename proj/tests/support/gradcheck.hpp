#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "nn.hpp"

namespace mitodet::testing {

// Scalar sum_i r_i * x_i with fixed pseudo-random weights r, so every output
// entry reaches the checked gradient.
inline nn::Var weighted_sum(const nn::Var& x, unsigned seed = 1) {
  auto weights = std::make_shared<std::vector<double>>(x->value.size());
  unsigned s = seed * 747796405u + 2891336453u;
  for (double& r : *weights) {
    s = s * 1664525u + 1013904223u;
    r = static_cast<double>(s >> 8) / static_cast<double>(1u << 24) - 0.5;
  }
  auto node = std::make_shared<nn::Node>();
  double total = 0.0;
  for (std::size_t i = 0; i < weights->size(); ++i) total += (*weights)[i] * x->value[i];
  node->value = nn::Tensor({1}, total);
  node->requires_grad = x->requires_grad;
  if (node->requires_grad) {
    node->inputs = {x};
    node->backward_fn = [weights](nn::Node& self) {
      nn::Tensor& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < weights->size(); ++i) g[i] += self.grad[0] * (*weights)[i];
    };
  }
  return node;
}

struct GradCheck {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t checked = 0;
};

// Central differences over every entry of every parameter (or every `stride`-th
// entry); `loss` must rebuild the graph from the current parameter values.
inline GradCheck check_gradients(nn::ParamSet& params, const std::function<nn::Var()>& loss,
                                 double h = 1e-6, std::size_t stride = 1) {
  params.zero_grad();
  nn::Var root = loss();
  nn::backward(root);

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  std::size_t counter = 0;
  for (auto& p : params.items()) {
    const nn::Tensor analytic = p.var->grad.empty() ? nn::Tensor(p.var->value.shape(), 0.0) : p.var->grad;
    for (std::size_t i = 0; i < p.var->value.size(); ++i) {
      if (counter++ % stride != 0) continue;
      double& w = p.var->value[i];
      const double saved = w;
      double plus, minus;
      {
        nn::NoGradGuard g;
        w = saved + h;
        plus = loss()->value[0];
        w = saved - h;
        minus = loss()->value[0];
      }
      w = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++out.checked;
    }
  }
  out.analytic_norm = std::sqrt(a2);
  out.numeric_norm = std::sqrt(n2);
  const double scale = std::max({out.analytic_norm, out.numeric_norm, 1e-300});
  out.relative_error = std::sqrt(diff2) / scale;
  return out;
}

}  // namespace mitodet::testing
