#include <doctest.h>

#include <cmath>
#include <random>

#include "detector.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace mitodet;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig c;
  c.input_size = 32;
  c.channels = {2, 3, 4};
  c.head_channels = 4;
  c.strides = {8, 16};
  c.level_bounds = {0.0, 8.0, std::numeric_limits<double>::infinity()};
  return c;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Maps whose positive locations carry exactly the encoded targets.
DetectorOutputMaps maps_from_targets(const std::vector<LevelTargets>& targets, const DetectorConfig& c, int size) {
  DetectorOutputMaps maps;
  maps.image_width = maps.image_height = size;
  for (std::size_t l = 0; l < targets.size(); ++l) {
    LevelMaps lm;
    lm.stride = c.strides[l];
    lm.rows = lm.cols = size / lm.stride;
    const std::size_t plane = static_cast<std::size_t>(lm.rows) * lm.cols;
    lm.class_logits = nn::Tensor({1, lm.rows, lm.cols}, -30.0);
    lm.centerness_logits = nn::Tensor({lm.rows, lm.cols}, -30.0);
    lm.distances = nn::Tensor({4, lm.rows, lm.cols}, 1.0);
    for (std::size_t i = 0; i < plane; ++i) {
      if (targets[l].label[i] < 0) continue;
      lm.class_logits[i] = 30.0;
      lm.centerness_logits[i] = logit(std::clamp(targets[l].centerness[i], 1e-6, 1 - 1e-6));
      for (int k = 0; k < 4; ++k) lm.distances[k * plane + i] = targets[l].distances[i][k];
    }
    maps.levels.push_back(std::move(lm));
  }
  return maps;
}

}  // namespace

TEST_CASE("grid shapes follow input size and strides") {
  DetectorConfig c;
  Detector d(c, 1);
  const auto maps = d.forward(testing::random_image(224, 224, 3));
  REQUIRE(maps.levels.size() == 2);
  CHECK(maps.levels[0].rows == 28);
  CHECK(maps.levels[0].cols == 28);
  CHECK(maps.levels[1].rows == 14);
  CHECK(maps.levels[1].cols == 14);
  CHECK(maps.levels[0].class_logits.shape() == std::vector<int>{1, 28, 28});
  CHECK(maps.levels[1].distances.shape() == std::vector<int>{4, 14, 14});
  CHECK_THROWS_AS(d.forward(testing::random_image(200, 224, 3)), Error);
}

TEST_CASE("zero image and zero head weights give the prior everywhere") {
  Detector d(DetectorConfig{}, 2);
  d.params().get("head.out.w")->value.fill(0.0);
  const double bias = d.params().get("head.out.b")->value[0];
  const auto maps = d.forward(Image(224, 224));
  for (const auto& lm : maps.levels) {
    for (double z : lm.class_logits.values()) CHECK(z == bias);
  }
}

TEST_CASE("forward is deterministic") {
  Detector d(DetectorConfig{}, 3);
  const Image img = testing::random_image(224, 224, 5);
  const auto a = d.detect(img), b = d.detect(img);
  CHECK(a == b);
  CHECK(d.forward(img).levels[1].centerness_logits.values()[7] == d.forward(img).levels[1].centerness_logits.values()[7]);
}

TEST_CASE("decode examples") {
  DetectorConfig c;
  DetectorOutputMaps maps;
  maps.image_width = maps.image_height = 224;
  LevelMaps lm;
  lm.stride = 16;
  lm.rows = lm.cols = 14;
  lm.class_logits = nn::Tensor({1, 14, 14}, -50.0);
  lm.centerness_logits = nn::Tensor({14, 14}, -50.0);
  lm.distances = nn::Tensor({4, 14, 14}, 10.0);
  maps.levels.push_back(lm);
  CHECK(decode_detections(maps, c).empty());

  const std::size_t center = 7 * 14 + 7;
  maps.levels[0].class_logits[center] = 0.0;
  maps.levels[0].centerness_logits[center] = 0.0;
  const auto dets = decode_detections(maps, c);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == 0.5);
  CHECK(dets[0].box == Box{110, 110, 130, 130});
}

TEST_CASE("encode then decode recovers planted boxes") {
  DetectorConfig c;
  std::mt19937 gen(8);
  std::uniform_real_distribution<double> pos(30.0, 170.0), side(20.0, 90.0);
  for (int t = 0; t < 30; ++t) {
    std::vector<Box> planted;
    while (planted.size() < 3) {
      const double x = pos(gen), y = pos(gen), s = side(gen);
      const Box b = clamp_box({x, y, x + s, y + s}, 224, 224);
      bool apart = true;
      for (const auto& q : planted) apart = apart && iou(q, b) == 0.0;
      if (apart) planted.push_back(b);
    }
    const auto maps = maps_from_targets(encode_targets(planted, c, 224, 224), c, 224);
    const auto dets = decode_detections(maps, c);
    REQUIRE(dets.size() == planted.size());
    for (const auto& b : planted) {
      bool found = false;
      for (const auto& d : dets) {
        found = found || (std::abs(d.box.x1 - b.x1) <= 1 && std::abs(d.box.y1 - b.y1) <= 1 &&
                          std::abs(d.box.x2 - b.x2) <= 1 && std::abs(d.box.y2 - b.y2) <= 1);
      }
      CHECK(found);
    }
  }
}

TEST_CASE("target assignment rules") {
  DetectorConfig c;
  // 50 px box: max distance at most 50 <= 64, so only the stride-8 level.
  const auto t = encode_targets({{100, 100, 150, 150}}, c, 224, 224);
  CHECK(t[0].positives > 0);
  CHECK(t[1].positives == 0);
  // Locations strictly inside only; cell (12,12) has center (100,100) on the edge.
  CHECK(t[0].label[12 * 28 + 12] == -1);
  CHECK(t[0].label[13 * 28 + 13] == 0);
  CHECK(centerness_target({10, 10, 10, 10}) == 1.0);
  CHECK(centerness_target({5, 10, 15, 10}) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-15));
  // Overlap: the smaller box wins.
  const auto o = encode_targets({{90, 90, 150, 150}, {100, 100, 130, 130}}, c, 224, 224);
  const std::size_t i = 14 * 28 + 14;
  REQUIRE(o[0].label[i] == 0);
  CHECK(o[0].distances[i][0] == doctest::Approx(116.0 - 100.0));
}

TEST_CASE("loss terms at trivial points") {
  const DetectorConfig c = tiny_config();
  std::vector<nn::Var> raw{nn::constant(nn::Tensor({1, 6, 4, 4}, 0.0)), nn::constant(nn::Tensor({1, 6, 2, 2}, 0.0))};
  for (auto& r : raw) {
    for (int y = 0; y < r->value.dim(2); ++y)
      for (int x = 0; x < r->value.dim(3); ++x) r->value.at(0, 0, y, x) = -40.0;
  }
  auto l = detector_loss(raw, {{}}, c, 32, 32);
  CHECK(l.classification < 1e-12);
  CHECK(l.regression == 0.0);
  CHECK(l.centerness == 0.0);
  CHECK(l.positives == 0);

  // Planted box with exact distances at every positive location: IoU term 0.
  const Box b{4, 4, 20, 20};
  const auto targets = encode_targets({b}, c, 32, 32);
  for (std::size_t lv = 0; lv < 2; ++lv) {
    const int cols = raw[lv]->value.dim(3);
    for (std::size_t i = 0; i < targets[lv].label.size(); ++i) {
      if (targets[lv].label[i] < 0) continue;
      for (int k = 0; k < 4; ++k) {
        raw[lv]->value.at(0, 2 + k, static_cast<int>(i) / cols, static_cast<int>(i) % cols) =
            std::log(targets[lv].distances[i][k] / c.strides[lv]);
      }
    }
  }
  l = detector_loss(raw, {{b}}, c, 32, 32);
  CHECK(l.positives > 0);
  CHECK(std::abs(l.regression) < 1e-12);
}

TEST_CASE("detector loss gradient on a small network") {
  const DetectorConfig c = tiny_config();
  Detector d(c, 4);
  CHECK(d.params().count() <= 5000);
  // Move the head away from its near-constant initialization.
  std::mt19937 gen(1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& v : d.params().get("head.out.w")->value.values()) v = n(gen);
  const Image a = testing::random_image(32, 32, 1), b = testing::random_image(32, 32, 2);
  const auto batch = nn::constant(image_batch({&a, &b}));
  const std::vector<std::vector<Box>> gt{{{4, 4, 20, 22}, {14, 10, 31, 30}}, {{2, 12, 16, 26}}};
  auto loss = [&] { return detector_loss(d.forward_raw(batch), gt, c, 32, 32).total; };
  const auto r = testing::check_gradients(d.params(), loss);
  MESSAGE("detector relative error " << r.relative_error);
  CHECK(r.analytic_norm > 0.0);
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("config validation") {
  DetectorConfig c;
  c.strides = {4, 16};
  CHECK_THROWS_AS(Detector(c, 1), Error);
  c = DetectorConfig{};
  c.level_bounds = {0.0, 64.0};
  CHECK_THROWS_AS(Detector(c, 1), Error);
}
