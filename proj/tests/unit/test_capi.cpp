#include <doctest.h>

#include <filesystem>
#include <string>

#include <json.hpp>

#include "image.hpp"
#include "mitodet/mitodet.h"
#include "tempdir.hpp"

using mitodet::testing::slurp;
using mitodet::testing::TempDir;

namespace {

const char* kTiny = R"({"data": {"train_images": 4, "validation_images": 2, "test_images": 2},
  "detector": {"training": {"epochs": 1}},
  "classifier": {"training": {"epochs": 1}},
  "fusion": {"training": {"epochs": 1}}})";

}  // namespace

TEST_CASE("status categories and last error") {
  CHECK(std::string(mfd_status_category(MFD_OK)) == "ok");
  CHECK(std::string(mfd_status_category(MFD_ERR_PREREQUISITE)) == "prerequisite");
  CHECK(std::string(mfd_status_category(static_cast<mfd_status>(42))) == "internal");
  CHECK(mfd_gen_synth(R"({"data": {"image_size": 64}})", "/tmp/unused") == MFD_ERR_INVALID_ARGUMENT);
  CHECK(std::string(mfd_last_error()).find("112") != std::string::npos);
  CHECK(mfd_gen_synth("{not json", "/tmp/unused") == MFD_ERR_PARSE);
  CHECK(mfd_gen_synth(nullptr, nullptr) == MFD_ERR_INVALID_ARGUMENT);
}

TEST_CASE("resolved config is returned as JSON") {
  char* text = nullptr;
  REQUIRE(mfd_resolve_config(R"({"seed": 5})", &text) == MFD_OK);
  const auto j = nlohmann::json::parse(text);
  mfd_string_free(text);
  CHECK(j["seed"] == 5);
  CHECK(j["preset"] == "desk");
}

TEST_CASE("workflow chain through the C API") {
  TempDir root;
  const std::string data = root / "data", ckpt = root / "ckpt", eval = root / "eval";
  REQUIRE(mfd_gen_synth(kTiny, data.c_str()) == MFD_OK);
  CHECK(std::filesystem::exists(data + "/train/annotations.json"));
  CHECK(std::filesystem::exists(data + "/test/images/img_00006.png"));

  CHECK(mfd_train_fusion(kTiny, data.c_str(), ckpt.c_str(), 0) == MFD_ERR_PREREQUISITE);
  CHECK(mfd_evaluate(kTiny, data.c_str(), "test", ckpt.c_str(), eval.c_str(), 1, 0) == MFD_ERR_NOT_FOUND);

  REQUIRE(mfd_train_detector(kTiny, data.c_str(), ckpt.c_str(), 0) == MFD_OK);
  CHECK(mfd_train_fusion(kTiny, data.c_str(), ckpt.c_str(), 0) == MFD_ERR_PREREQUISITE);
  CHECK(std::string(mfd_last_error()).find("classifier") != std::string::npos);
  REQUIRE(mfd_train_classifier(kTiny, data.c_str(), ckpt.c_str(), 0) == MFD_OK);
  REQUIRE(mfd_train_fusion(kTiny, data.c_str(), ckpt.c_str(), 0) == MFD_OK);

  const std::string history = slurp(ckpt + "/detector_history.csv");
  CHECK(history.rfind("epoch,lr,", 0) == 0);
  CHECK(history.find("\n0,0.01,") != std::string::npos);
  const auto side = nlohmann::json::parse(slurp(ckpt + "/classifier.json"));
  CHECK(side.contains("validation_accuracy"));
  CHECK(side["seed"] == 7);

  REQUIRE(mfd_evaluate(kTiny, data.c_str(), "test", ckpt.c_str(), eval.c_str(), 1, 0) == MFD_OK);
  const auto metrics = nlohmann::json::parse(slurp(eval + "/metrics.json"));
  CHECK(metrics.contains("composite"));
  CHECK(metrics.contains("baseline"));
  CHECK(metrics.contains("config_hash"));
  CHECK(metrics["seed"] == 7);

  REQUIRE(mfd_evaluate(kTiny, data.c_str(), "test", nullptr, (root / "oracle").c_str(), 0, 1) == MFD_OK);
  CHECK(nlohmann::json::parse(slurp(root / "oracle/metrics.json"))["f1"] == 1.0);
  CHECK(mfd_evaluate(kTiny, (root / "nope").c_str(), "test", nullptr, eval.c_str(), 0, 1) == MFD_ERR_NOT_FOUND);

  mfd_model* model = nullptr;
  REQUIRE(mfd_model_load(ckpt.c_str(), &model) == MFD_OK);
  mfd_detections* dets = nullptr;
  const std::string png = data + "/test/images/img_00006.png";
  REQUIRE(mfd_model_infer_png(model, png.c_str(), 1, &dets) == MFD_OK);
  for (size_t i = 0; i < mfd_detections_count(dets); ++i) {
    mfd_detection d;
    REQUIRE(mfd_detections_get(dets, i, &d) == MFD_OK);
    CHECK(d.x1 <= d.x2);
    CHECK(d.score <= 1.0);
  }
  mfd_detection d;
  CHECK(mfd_detections_get(dets, mfd_detections_count(dets), &d) == MFD_ERR_INVALID_ARGUMENT);
  mfd_detections_free(dets);
  mfd_model_free(model);

  const int ids[] = {0, 3};
  REQUIRE(mfd_export_attention(kTiny, data.c_str(), "test", ckpt.c_str(), ids, 2, (root / "att").c_str()) == MFD_OK);
  const mitodet::Image heat = mitodet::read_png(root / "att/attention_00003.png");
  CHECK(heat.width == 112);
  CHECK(heat.height == 56);
  const int bad[] = {999};
  CHECK(mfd_export_attention(kTiny, data.c_str(), "test", ckpt.c_str(), bad, 1, (root / "att").c_str()) ==
        MFD_ERR_NOT_FOUND);
  CHECK(mfd_export_attention(kTiny, data.c_str(), "test", (root / "none").c_str(), ids, 1, (root / "att").c_str()) ==
        MFD_ERR_PREREQUISITE);
}
