#include "config.hpp"

#include <cmath>
#include <limits>

#include "error.hpp"
#include "serialize.hpp"

namespace mitodet {

using nlohmann::json;

namespace {

json training_json(const StageTraining& t) {
  return {{"epochs", t.epochs},         {"initial_lr", t.initial_lr}, {"gamma", t.gamma},
          {"step_epochs", t.step_epochs}, {"momentum", t.momentum},   {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size}, {"clip_norm", t.clip_norm},   {"augment", t.augment}};
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::Parse, "config " + where + "." + key + ": wrong type");
  }
}

StageTraining training_from_json(const json& j, StageTraining t, const std::string& where) {
  read(j, "epochs", t.epochs, where);
  read(j, "initial_lr", t.initial_lr, where);
  read(j, "gamma", t.gamma, where);
  read(j, "step_epochs", t.step_epochs, where);
  read(j, "momentum", t.momentum, where);
  read(j, "weight_decay", t.weight_decay, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "clip_norm", t.clip_norm, where);
  read(j, "augment", t.augment, where);
  if (t.epochs < 0 || t.batch_size <= 0 || !(t.initial_lr > 0.0) || !(t.gamma > 0.0 && t.gamma < 1.0) ||
      t.step_epochs <= 0) {
    fail(ErrorCode::InvalidArgument, "config " + where + ": invalid training schedule");
  }
  return t;
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  auto it = j.find(key);
  return it == j.end() ? empty : *it;
}

}  // namespace

TrainOptions StageTraining::options(std::uint64_t seed) const {
  TrainOptions o;
  o.epochs = epochs;
  o.schedule = {initial_lr, gamma, step_epochs};
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.batch_size = batch_size;
  o.clip_norm = clip_norm;
  o.augment = augment;
  o.seed = seed;
  return o;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.detector_training = {.epochs = 30, .initial_lr = 0.01, .batch_size = 4};
    c.classifier_training = {.epochs = 15, .initial_lr = 0.01, .batch_size = 16};
    c.fusion_training = {.epochs = 30, .initial_lr = 1e-3, .batch_size = 1, .augment = false};
  } else if (name == "paper") {
    c.detector_training = {.epochs = 150, .initial_lr = 1e-4, .batch_size = 4};
    c.classifier_training = {.epochs = 50, .initial_lr = 1e-5, .batch_size = 16};
    c.fusion_training = {.epochs = 150, .initial_lr = 1e-4, .batch_size = 1, .augment = false};
  } else {
    fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (expected desk or paper)");
  }
  return c;
}

json detector_config_json(const DetectorConfig& c) {
  json bounds = json::array();
  for (double b : c.level_bounds) {
    if (std::isinf(b)) {
      bounds.push_back(nullptr);
    } else {
      bounds.push_back(b);
    }
  }
  return {{"input_size", c.input_size},       {"strides", c.strides},
          {"channels", c.channels},           {"head_channels", c.head_channels},
          {"num_classes", c.num_classes},     {"score_threshold", c.score_threshold},
          {"nms_iou", c.nms_iou},             {"level_bounds", bounds},
          {"gt_box_size", c.gt_box_size},     {"focal_alpha", c.focal_alpha},
          {"focal_gamma", c.focal_gamma}};
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  const std::string where = "detector";
  read(j, "input_size", c.input_size, where);
  read(j, "strides", c.strides, where);
  read(j, "channels", c.channels, where);
  read(j, "head_channels", c.head_channels, where);
  read(j, "num_classes", c.num_classes, where);
  read(j, "score_threshold", c.score_threshold, where);
  read(j, "nms_iou", c.nms_iou, where);
  read(j, "gt_box_size", c.gt_box_size, where);
  read(j, "focal_alpha", c.focal_alpha, where);
  read(j, "focal_gamma", c.focal_gamma, where);
  if (auto it = j.find("level_bounds"); it != j.end()) {
    if (!it->is_array()) fail(ErrorCode::Parse, "config detector.level_bounds: expected an array");
    c.level_bounds.clear();
    for (const auto& b : *it) {
      c.level_bounds.push_back(b.is_null() ? std::numeric_limits<double>::infinity() : b.get<double>());
    }
  }
  c.validate();
  return c;
}

json classifier_config_json(const FalcnnConfig& c) {
  return {{"input_size", c.input_size},
          {"widths", c.widths},
          {"num_classes", c.num_classes},
          {"feedback_cycles", c.feedback_cycles}};
}

FalcnnConfig classifier_config_from_json(const json& j) {
  FalcnnConfig c;
  read(j, "input_size", c.input_size, "classifier");
  read(j, "widths", c.widths, "classifier");
  read(j, "num_classes", c.num_classes, "classifier");
  read(j, "feedback_cycles", c.feedback_cycles, "classifier");
  c.validate();
  return c;
}

json fusion_config_json(const FusionConfig& c) {
  return {{"max_offset", c.max_offset}, {"lambda", c.lambda}, {"radius", c.radius}};
}

FusionConfig fusion_config_from_json(const json& j) {
  FusionConfig c;
  read(j, "max_offset", c.max_offset, "fusion");
  read(j, "lambda", c.lambda, "fusion");
  read(j, "radius", c.radius, "fusion");
  if (!(c.max_offset > 0.0) || !(c.radius > 0.0) || !(c.lambda >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "config fusion: max_offset, radius must be > 0 and lambda >= 0");
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["data"] = {{"train_images", c.data.synth.image_count},
               {"validation_images", c.data.validation_images},
               {"test_images", c.data.test_images},
               {"image_size", c.data.synth.image_size},
               {"positives_per_image", c.data.synth.positives_per_image},
               {"distractors_per_image", c.data.synth.distractors_per_image},
               {"min_separation", c.data.synth.min_separation}};
  j["detector"] = detector_config_json(c.detector);
  j["detector"]["training"] = training_json(c.detector_training);
  j["classifier"] = classifier_config_json(c.classifier);
  j["classifier"]["training"] = training_json(c.classifier_training);
  j["classifier"]["split"] = {{"train", c.classifier_split.train_fraction},
                              {"test", c.classifier_split.test_fraction},
                              {"validation", c.classifier_split.validation_fraction}};
  j["classifier"]["negatives_per_positive"] = c.negatives_per_positive;
  j["fusion"] = fusion_config_json(c.fusion);
  j["fusion"]["training"] = training_json(c.fusion_training);
  j["eval"] = {{"radius", c.eval_radius}};
  return j;
}

RunConfig resolve_config(const json& overrides) {
  if (!overrides.is_null() && !overrides.is_object()) {
    fail(ErrorCode::Parse, "config must be a JSON object");
  }
  std::string preset = "desk";
  if (overrides.is_object()) read(overrides, "preset", preset, "$");
  json merged = to_json(preset_config(preset));
  if (overrides.is_object()) merged.merge_patch(overrides);
  // merge_patch drops null entries; restore the unbounded last level.
  if (overrides.is_object() && overrides.contains("detector") &&
      overrides["detector"].contains("level_bounds")) {
    merged["detector"]["level_bounds"] = overrides["detector"]["level_bounds"];
  }

  RunConfig c = preset_config(preset);
  read(merged, "seed", c.seed, "$");
  const json& data = section(merged, "data");
  read(data, "train_images", c.data.synth.image_count, "data");
  read(data, "validation_images", c.data.validation_images, "data");
  read(data, "test_images", c.data.test_images, "data");
  read(data, "image_size", c.data.synth.image_size, "data");
  read(data, "positives_per_image", c.data.synth.positives_per_image, "data");
  read(data, "distractors_per_image", c.data.synth.distractors_per_image, "data");
  read(data, "min_separation", c.data.synth.min_separation, "data");
  if (c.data.synth.image_size < 112) fail(ErrorCode::InvalidArgument, "data.image_size must be >= 112");
  if (c.data.synth.image_count < 0 || c.data.validation_images < 0 || c.data.test_images < 0) {
    fail(ErrorCode::InvalidArgument, "data image counts must be non-negative");
  }

  const json& det = section(merged, "detector");
  c.detector = detector_config_from_json(det);
  c.detector_training = training_from_json(section(det, "training"), c.detector_training, "detector.training");

  const json& cls = section(merged, "classifier");
  c.classifier = classifier_config_from_json(cls);
  c.classifier_training = training_from_json(section(cls, "training"), c.classifier_training, "classifier.training");
  const json& split = section(cls, "split");
  read(split, "train", c.classifier_split.train_fraction, "classifier.split");
  read(split, "test", c.classifier_split.test_fraction, "classifier.split");
  read(split, "validation", c.classifier_split.validation_fraction, "classifier.split");
  c.classifier_split.seed = c.seed;
  read(cls, "negatives_per_positive", c.negatives_per_positive, "classifier");

  const json& fus = section(merged, "fusion");
  c.fusion = fusion_config_from_json(fus);
  c.fusion_training = training_from_json(section(fus, "training"), c.fusion_training, "fusion.training");

  read(section(merged, "eval"), "radius", c.eval_radius, "eval");
  if (!(c.eval_radius > 0.0)) fail(ErrorCode::InvalidArgument, "eval.radius must be > 0");
  return c;
}

std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace mitodet
