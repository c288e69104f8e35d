#include <doctest.h>

#include <cmath>
#include <random>

#include "error.hpp"
#include "fusion.hpp"
#include "gradcheck.hpp"

using namespace mitodet;

namespace {

FusionInput random_input(unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FusionInput in;
  for (double& v : in.values) v = u(gen);
  return in;
}

}  // namespace

TEST_CASE("fusion shapes and parameter count") {
  CHECK(kFusionInputSize == 203);
  FusionNet net(1);
  CHECK(net.params().count() == 10419);
  CHECK(net.layer_output_widths(random_input(1)) == std::vector<int>{48, 12, 3});
  CHECK_THROWS_AS(net.forward(nn::constant(nn::Tensor({1, 202}))), Error);
}

TEST_CASE("fresh fusion network is the identity adjustment") {
  FusionNet net(2);
  const Adjustment a = net.forward(random_input(2));
  CHECK(a.u == 0.0);
  CHECK(a.v == 0.0);
  CHECK(a.w == 0.0);
  const Detection d{{10.5, 20.25, 60.5, 70.125}, 0, 0.73};
  CHECK(apply_adjustment(d, a, 224, 224) == d);

  FusionNet zero(3);
  for (auto& p : zero.params().items()) p.var->value.fill(0.0);
  const Adjustment z = zero.forward(random_input(3));
  CHECK(z.u == 0.0);
  CHECK(z.w == 0.0);
}

TEST_CASE("assemble_fusion_input layout") {
  nn::Tensor att({14, 14});
  for (std::size_t i = 0; i < att.size(); ++i) att[i] = static_cast<double>(i) / 196.0;
  const FusionInput in = assemble_fusion_input({{0, 0, 224, 224}, 0, 0.4}, 0.9, att, 224, 224);
  CHECK(in.values[0] == 0.0);
  CHECK(in.values[1] == 0.0);
  CHECK(in.values[2] == 1.0);
  CHECK(in.values[3] == 1.0);
  CHECK(in.values[4] == 0.0);
  CHECK(in.values[5] == 0.4);
  CHECK(in.values[6] == 0.9);
  CHECK(in.values[7 + 15] == att[15]);
  CHECK(in.values[202] == att[195]);
  CHECK_THROWS_AS(assemble_fusion_input({}, 0.5, nn::Tensor({7, 7}), 224, 224), Error);
}

TEST_CASE("apply_adjustment examples") {
  const Detection d{{100, 100, 150, 150}, 0, 0.6};
  const Detection right = apply_adjustment(d, {50.0, 0.0, 0.0}, 224, 224);
  CHECK(right.box.x1 == doctest::Approx(128.0).epsilon(1e-12));
  CHECK(right.box.y1 == 100.0);
  // sigmoid(w) = 0.25 gives multiplier 0.5.
  const Detection scaled = apply_adjustment(d, {0.0, 0.0, std::log(1.0 / 3.0)}, 224, 224);
  CHECK(scaled.score == doctest::Approx(0.3).epsilon(1e-12));
  // Scores stay within [0,1] and boxes within the image.
  const Detection big = apply_adjustment({{200, 200, 224, 224}, 0, 0.9}, {3.0, 3.0, 5.0}, 224, 224);
  CHECK(big.score == 1.0);
  CHECK(big.box.x2 == 224.0);
}

TEST_CASE("fusion loss examples") {
  const Detection hit{{95, 95, 105, 105}, 0, 1.0};
  CHECK(fusion_loss({hit}, {{100, 100}}, 30.0, 1.0) < 1e-6);
  const Detection miss{{0, 0, 10, 10}, 0, 0.5};
  CHECK(fusion_loss({miss}, {}, 30.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fusion_loss({}, {{1, 1}}, 30.0, 1.0) == 0.0);
  // Matched center off by (3, 4): L1 of 7 px in radius units.
  const Detection off{{98, 99, 108, 109}, 0, 0.5};
  CHECK(fusion_loss({off}, {{100, 100}}, 30.0, 2.0) ==
        doctest::Approx(std::log(2.0) + 2.0 * 7.0 / 30.0).epsilon(1e-12));
}

TEST_CASE("gradient through fusion network, adjustment and loss") {
  FusionNet net(4);
  std::mt19937 gen(9);
  std::normal_distribution<double> n(0.0, 0.05);
  for (double& v : net.params().get("fc2.w")->value.values()) v = n(gen);
  std::vector<Detection> dets{{{40, 40, 90, 90}, 0, 0.55}, {{120, 30, 170, 80}, 0, 0.42},
                              {{10, 150, 60, 200}, 0, 0.35}, {{160, 160, 210, 210}, 0, 0.71}};
  const std::vector<Point> gt{{70, 63}, {190, 181}};
  nn::Tensor x({4, kFusionInputSize});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = random_input(static_cast<unsigned>(i / 203)).values[i % 203];
  const auto input = nn::constant(x);
  FusionConfig cfg;
  auto loss = [&] { return fusion_loss_graph(net.forward(input), dets, gt, 224, 224, cfg); };
  const auto r = testing::check_gradients(net.params(), loss);
  MESSAGE("fusion relative error " << r.relative_error);
  CHECK(r.analytic_norm > 0.0);
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("loss graph value equals the plain loss") {
  FusionNet net(5);
  for (double& v : net.params().get("fc2.w")->value.values()) v = 0.01;
  const std::vector<Detection> dets{{{40, 40, 90, 90}, 0, 0.55}, {{0, 0, 50, 50}, 0, 0.9}};
  nn::Tensor x({2, kFusionInputSize}, 0.3);
  const auto raw = net.forward(nn::constant(x));
  std::vector<Detection> adjusted;
  for (int i = 0; i < 2; ++i) {
    adjusted.push_back(apply_adjustment(dets[i], {raw->value[i * 3], raw->value[i * 3 + 1], raw->value[i * 3 + 2]}, 224, 224));
  }
  CHECK(fusion_loss_graph(raw, dets, {{66, 66}}, 224, 224, {})->value[0] == fusion_loss(adjusted, {{66, 66}}, 30.0, 1.0));
}
