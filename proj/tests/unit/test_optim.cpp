#include <doctest.h>

#include <cmath>

#include "error.hpp"
#include "optim.hpp"

using namespace mitodet;

TEST_CASE("step-decay learning rate") {
  const LrSchedule s{1e-4, 0.7, 30};
  const std::pair<int, double> expected[] = {{0, 1e-4}, {29, 1e-4}, {30, 7e-5}, {59, 7e-5},
                                             {60, 4.9e-5}, {90, 3.43e-5}, {149, 1e-4 * 0.7 * 0.7 * 0.7 * 0.7}};
  for (const auto& [epoch, lr] : expected) {
    CHECK(std::abs(lr_at_epoch(s, epoch) - lr) <= 1e-12 * lr);
  }
  CHECK(lr_at_epoch({1e-5, 0.7, 30}, 0) == 1e-5);
  CHECK_THROWS_AS(lr_at_epoch(s, -1), Error);
}

TEST_CASE("sgd with momentum follows the update rule") {
  nn::ParamSet p;
  auto w = p.add("w", nn::Tensor({2}, 1.0));
  Sgd sgd(p, 0.9, 0.1);
  double v0 = 0.0, w0 = 1.0;
  for (int step = 0; step < 3; ++step) {
    p.zero_grad();
    w->ensure_grad()[0] = 0.5;
    w->ensure_grad()[1] = 0.5;
    sgd.step(0.01);
    v0 = 0.9 * v0 + 0.5 + 0.1 * w0;
    w0 -= 0.01 * v0;
    CHECK(w->value[0] == doctest::Approx(w0).epsilon(1e-14));
  }
}

TEST_CASE("gradient clipping") {
  nn::ParamSet p;
  auto w = p.add("w", nn::Tensor({2}, 0.0));
  w->ensure_grad()[0] = 3.0;
  w->ensure_grad()[1] = 4.0;
  Sgd sgd(p, 0.0);
  CHECK(sgd.clip_grad_norm(1.0) == doctest::Approx(5.0));
  CHECK(w->grad[0] == doctest::Approx(0.6));
  CHECK(w->grad[1] == doctest::Approx(0.8));
  w->grad[0] = std::nan("");
  CHECK_THROWS_AS(sgd.clip_grad_norm(1.0), Error);
}
