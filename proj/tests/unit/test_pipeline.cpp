#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "error.hpp"
#include "models.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"
#include "serialize.hpp"
#include "tempdir.hpp"

using namespace mitodet;

namespace {

Dataset small_synth(int n, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.image_count = n;
  return generate_synthetic_dataset(cfg, seed);
}

}  // namespace

TEST_CASE("composite with identity fusion equals the bare detector") {
  CompositeModel m = testing::noisy_model(3);
  const Dataset ds = small_synth(3, 5);
  std::size_t total = 0;
  for (const auto& rec : ds.images) {
    const auto bare = m.detector.detect(rec.image);
    total += bare.size();
    CHECK(composite_infer(rec.image, m) == bare);
  }
  CHECK(total > 0);
}

TEST_CASE("per-detection fan-out counts") {
  CompositeModel m = testing::noisy_model(4);
  testing::perturb_fusion(m, 1);
  const Image img = small_synth(1, 9).images[0].image;
  InferenceTrace trace;
  composite_infer(img, m, &trace);
  const std::size_t n = m.detector.detect(img).size();
  CHECK(n > 0);
  CHECK(trace.detections == n);
  CHECK(trace.patches_sampled == n);
  CHECK(trace.classifier_evaluations == n);
  CHECK(trace.fusion_inputs == n);
}

TEST_CASE("no detections means no classifier work") {
  CompositeModel m = testing::noisy_model(5);
  m.detector.params().get("head.out.w")->value.fill(0.0);
  m.detector.params().get("head.out.b")->value[0] = -30.0;
  InferenceTrace trace;
  CHECK(composite_infer(testing::random_image(224, 224, 1), m, &trace).empty());
  CHECK(trace.classifier_evaluations == 0);
  CHECK(trace.patches_sampled == 0);
}

TEST_CASE("composite output is sorted and thresholded") {
  CompositeModel m = testing::noisy_model(6);
  testing::perturb_fusion(m, 2, 0.5);
  const auto dets = composite_infer(small_synth(1, 4).images[0].image, m);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(dets[i].score >= m.detector.config().score_threshold);
    CHECK(dets[i].score <= 1.0);
    if (i > 0) CHECK(dets[i - 1].score >= dets[i].score);
  }
}

TEST_CASE("fusion training leaves upstream weights untouched") {
  CompositeModel m = testing::noisy_model(7);
  const std::string det_before = serialize_params(m.detector.params());
  const std::string cls_before = serialize_params(m.classifier.params());
  const std::string fusion_before = serialize_params(m.fusion.params());
  const Dataset ds = small_synth(4, 11);
  TrainOptions opt;
  opt.epochs = 2;
  opt.schedule = {1e-2, 0.7, 30};
  opt.batch_size = 1;
  const auto r = train_fusion_in_situ(m, ds.slice(0, 3), ds.slice(3, 4), opt, 30.0);
  CHECK(r.detector_hash_before == r.detector_hash_after);
  CHECK(r.classifier_hash_before == r.classifier_hash_after);
  CHECK(serialize_params(m.detector.params()) == det_before);
  CHECK(serialize_params(m.classifier.params()) == cls_before);
  CHECK(r.history.epochs.size() == 2);
  CHECK(r.history.epochs[0].lr == 1e-2);
  if (r.history.best_epoch >= 0) CHECK(serialize_params(m.fusion.params()) != fusion_before);
}

TEST_CASE("save and load round trip") {
  CompositeModel m = testing::noisy_model(8);
  testing::perturb_fusion(m, 3);
  testing::TempDir dir;
  save_model(m, dir.str());
  const CompositeModel back = load_model(dir.str());
  const Image img = small_synth(1, 2).images[0].image;
  CHECK(composite_infer(img, back) == composite_infer(img, m));
  CHECK(params_hash(back.fusion.params()) == params_hash(m.fusion.params()));
  CHECK(back.seed == m.seed);

  auto code_of = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };

  auto manifest = nlohmann::json::parse(testing::slurp(dir / "manifest.json"));
  manifest["schema_version"] = 99;
  testing::spit(dir / "manifest.json", manifest.dump());
  CHECK(code_of([&] { load_model(dir.str()); }) == ErrorCode::Version);
  manifest["schema_version"] = 1;
  testing::spit(dir / "manifest.json", manifest.dump());
  std::filesystem::remove(dir / "fusion.bin");
  CHECK(code_of([&] { load_model(dir.str()); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { load_model(dir / "nothing"); }) == ErrorCode::NotFound);
}

TEST_CASE("stage checkpoints") {
  testing::TempDir dir;
  CHECK_THROWS_AS(load_classifier(dir.str()), Error);
  Falcnn f(FalcnnConfig{}, 1);
  save_classifier(f, dir.str(), R"({"seed": 4})");
  const auto side = nlohmann::json::parse(testing::slurp(dir / "classifier.json"));
  CHECK(side["seed"] == 4);
  CHECK(side["stage"] == "classifier");
  CHECK(params_hash(load_classifier(dir.str()).params()) == params_hash(f.params()));
}
