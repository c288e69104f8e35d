#include <doctest.h>

#include <random>

#include "error.hpp"
#include "gradcheck.hpp"
#include "nn.hpp"

using namespace mitodet;
using mitodet::testing::check_gradients;
using mitodet::testing::weighted_sum;

namespace {

nn::Tensor random_tensor(std::vector<int> shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  nn::Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(gen);
  return t;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
  const auto x = random_tensor({2, 3, 7, 6}, 1), w = random_tensor({4, 3, 3, 3}, 2), b = random_tensor({4}, 3);
  for (int stride : {1, 2}) {
    const auto y = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), stride, 1)->value;
    const int ho = (7 + 2 - 3) / stride + 1, wo = (6 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == std::vector<int>{2, 4, ho, wo});
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            double s = b[o];
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int yy = i * stride - 1 + ky, xx = j * stride - 1 + kx;
                  if (yy >= 0 && yy < 7 && xx >= 0 && xx < 6) s += w.at(o, c, ky, kx) * x.at(n, c, yy, xx);
                }
            CHECK(y.at(n, o, i, j) == doctest::Approx(s).epsilon(1e-12));
          }
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convT(y)> with the same kernel and no bias.
  const auto x = random_tensor({1, 2, 8, 8}, 4), w = random_tensor({3, 2, 4, 4}, 5);
  const auto zero3 = nn::constant(nn::Tensor({3}, 0.0)), zero2 = nn::constant(nn::Tensor({2}, 0.0));
  const auto cx = nn::conv2d(nn::constant(x), nn::constant(w), zero3, 2, 1)->value;
  const auto y = random_tensor(cx.shape(), 6);
  // convT weight layout is [in=3, out=2, k, k], which is w itself.
  const auto ty = nn::conv_transpose2d(nn::constant(y), nn::constant(w), zero2, 2, 1)->value;
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("layer gradients match finite differences") {
  nn::ParamSet p;
  auto x = p.add("x", random_tensor({2, 3, 6, 6}, 7));
  auto w = p.add("w", random_tensor({4, 3, 3, 3}, 8));
  auto b = p.add("b", random_tensor({4}, 9));
  auto wt = p.add("wt", random_tensor({4, 2, 4, 4}, 10));
  auto bt = p.add("bt", random_tensor({2}, 11));
  auto fw = p.add("fw", random_tensor({3, 4}, 12));
  auto fb = p.add("fb", random_tensor({3}, 13));

  SUBCASE("conv2d stride 1 and 2") {
    for (int s : {1, 2}) CHECK(check_gradients(p, [&] { return weighted_sum(nn::conv2d(x, w, b, s, 1)); }).relative_error < kTol);
  }
  SUBCASE("conv_transpose2d") {
    CHECK(check_gradients(p, [&] { return weighted_sum(nn::conv_transpose2d(nn::conv2d(x, w, b, 1, 1), wt, bt, 2, 1)); })
              .relative_error < kTol);
  }
  SUBCASE("pooling, activations, linear") {
    auto f = [&] {
      auto h = nn::max_pool2(nn::tanh(nn::conv2d(x, w, b, 1, 1)));
      auto g = nn::sigmoid(nn::linear(nn::global_avg_pool(nn::relu(h)), fw, fb));
      return weighted_sum(nn::add(g, g));
    };
    CHECK(check_gradients(p, f).relative_error < kTol);
  }
  SUBCASE("attention gate, class activation map, min-max normalization") {
    auto f = [&] {
      auto feat = nn::conv2d(x, w, b, 1, 1);
      auto cam = nn::class_activation_map(feat, fw, {2, 0});
      return weighted_sum(nn::attention_gate(feat, nn::minmax_normalize(cam)));
    };
    CHECK(check_gradients(p, f).relative_error < kTol);
  }
  SUBCASE("softmax cross entropy and channel slices") {
    const std::vector<int> labels{1, 2};
    auto f = [&] {
      auto h = nn::channels(nn::conv2d(x, w, b, 1, 1), 1, 4);
      return nn::softmax_cross_entropy(nn::linear(nn::global_avg_pool(h), nn::constant(random_tensor({3, 3}, 14)), fb), labels);
    };
    CHECK(check_gradients(p, f).relative_error < kTol);
  }
}

TEST_CASE("minmax_normalize") {
  nn::Tensor t({1, 1, 2, 2});
  t[0] = 1;
  t[1] = 2;
  t[2] = 3;
  t[3] = 5;
  const auto y = nn::minmax_normalize(nn::constant(t))->value;
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.25);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 1.0);
  const auto z = nn::minmax_normalize(nn::constant(nn::Tensor({1, 1, 3, 3}, 4.2)))->value;
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("softmax cross entropy of equal logits is ln 2") {
  const std::vector<int> labels{0};
  CHECK(nn::softmax_cross_entropy(nn::constant(nn::Tensor({1, 2}, 0.0)), labels)->value[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("no-grad mode records no graph") {
  nn::ParamSet p;
  auto w = p.add("w", random_tensor({2, 2}, 1));
  nn::NoGradGuard g;
  auto y = nn::linear(nn::constant(random_tensor({1, 2}, 2)), w, nn::constant(nn::Tensor({2}, 0.0)));
  CHECK(y->inputs.empty());
  CHECK_FALSE(y->requires_grad);
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(nn::conv2d(nn::constant(nn::Tensor({1, 2, 4, 4})), nn::constant(nn::Tensor({1, 3, 3, 3})),
                             nn::constant(nn::Tensor({1})), 1, 1),
                  Error);
  CHECK_THROWS_AS(nn::linear(nn::constant(nn::Tensor({1, 3})), nn::constant(nn::Tensor({2, 4})),
                             nn::constant(nn::Tensor({2}))),
                  Error);
}
