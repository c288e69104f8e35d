#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "detector.hpp"
#include "falcnn.hpp"
#include "fusion.hpp"
#include "training.hpp"

namespace mitodet {

struct CompositeModel {
  Detector detector;
  Falcnn classifier;
  FusionNet fusion;
  FusionConfig fusion_config;
  std::uint64_t seed = 0;
  bool frozen_detector = false;
  bool frozen_classifier = false;
};

// Stage counts from one composite_infer call.
struct InferenceTrace {
  std::size_t detections = 0;
  std::size_t patches_sampled = 0;
  std::size_t classifier_evaluations = 0;
  std::size_t fusion_inputs = 0;
};

// Same inputs and outputs as bare detector inference (Detector::detect).
std::vector<Detection> composite_infer(const Image& image, const CompositeModel& model,
                                       InferenceTrace* trace = nullptr);
std::vector<Detection> baseline_infer(const Image& image, const CompositeModel& model);

// Upstream outputs for one image; constant while upstream weights are frozen.
struct FusionCandidates {
  int image_id = 0;
  int width = 0;
  int height = 0;
  std::vector<Detection> detections;
  nn::Tensor inputs;  // [N, 203]
  std::vector<Point> ground_truth;
};

FusionCandidates prepare_candidates(const ImageRecord& rec, const Dataset& dataset,
                                    const CompositeModel& model);
std::vector<Detection> fuse_candidates(const FusionCandidates& c, const CompositeModel& model);

struct FusionTrainResult {
  TrainHistory history;
  std::string detector_hash_before;
  std::string detector_hash_after;
  std::string classifier_hash_before;
  std::string classifier_hash_after;
};

// Only the fusion parameters change; both upstream parameter sets are hashed
// before and after and an Error is raised if either moved.
FusionTrainResult train_fusion_in_situ(CompositeModel& model, const Dataset& train,
                                       const Dataset& validation, const TrainOptions& options,
                                       double match_radius);

// Stage checkpoints: <dir>/<stage>.bin plus <stage>.json sidecar.
void save_detector(const Detector& d, const std::string& dir, const std::string& sidecar_extra);
Detector load_detector(const std::string& dir);
void save_classifier(const Falcnn& c, const std::string& dir, const std::string& sidecar_extra);
Falcnn load_classifier(const std::string& dir);

// Composite checkpoint: the three stage checkpoints plus manifest.json.
void save_model(const CompositeModel& model, const std::string& dir);
CompositeModel load_model(const std::string& dir);

}  // namespace mitodet
