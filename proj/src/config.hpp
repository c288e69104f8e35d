#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "dataset.hpp"
#include "detector.hpp"
#include "falcnn.hpp"
#include "fusion.hpp"
#include "training.hpp"

namespace mitodet {

struct StageTraining {
  int epochs = 30;
  double initial_lr = 1e-4;
  double gamma = 0.7;
  int step_epochs = 30;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 4;
  double clip_norm = 10.0;
  bool augment = true;

  TrainOptions options(std::uint64_t seed) const;
};

struct DataConfig {
  SynthConfig synth;  // synth.image_count is the training image count
  int validation_images = 40;
  int test_images = 40;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  DataConfig data;
  DetectorConfig detector;
  StageTraining detector_training;
  FalcnnConfig classifier;
  StageTraining classifier_training;
  SplitSpec classifier_split;  // seed taken from `seed` when resolved
  int negatives_per_positive = 1;
  FusionConfig fusion;
  StageTraining fusion_training;
  double eval_radius = 30.0;
};

RunConfig preset_config(const std::string& name);

nlohmann::json to_json(const RunConfig& config);
// Starts from the preset named in `overrides` ("desk" by default) and applies
// the remaining fields as a JSON merge patch.
RunConfig resolve_config(const nlohmann::json& overrides);

nlohmann::json detector_config_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
nlohmann::json classifier_config_json(const FalcnnConfig& c);
FalcnnConfig classifier_config_from_json(const nlohmann::json& j);
nlohmann::json fusion_config_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const nlohmann::json& j);

std::string json_hash(const nlohmann::json& j);

}  // namespace mitodet
