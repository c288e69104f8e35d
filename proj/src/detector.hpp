#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"
#include "nn.hpp"

namespace mitodet {

struct DetectorConfig {
  int input_size = 224;
  std::vector<int> strides{8, 16};
  std::vector<int> channels{16, 32, 64};  // one stride-2 conv stage each
  int head_channels = 32;
  int num_classes = 1;
  double score_threshold = 0.3;
  double nms_iou = 0.5;
  // Regression-range boundaries, one more entry than strides.
  std::vector<double> level_bounds{0.0, 64.0, std::numeric_limits<double>::infinity()};
  double gt_box_size = 50.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  int backbone_stride() const { return 1 << channels.size(); }
  void validate() const;
};

// Post-activation head outputs of one pyramid level for a single image.
struct LevelMaps {
  int stride = 0;
  int rows = 0;
  int cols = 0;
  nn::Tensor class_logits;       // [num_classes, rows, cols]
  nn::Tensor centerness_logits;  // [rows, cols]
  nn::Tensor distances;          // [4, rows, cols], l/t/r/b in pixels, >= 0
};

struct DetectorOutputMaps {
  int image_width = 0;
  int image_height = 0;
  std::vector<LevelMaps> levels;
};

// FCOS regression targets of one level for one image.
struct LevelTargets {
  std::vector<int> label;                        // -1 background, else class id
  std::vector<std::array<double, 4>> distances;  // l, t, r, b
  std::vector<double> centerness;
  int positives = 0;
};

struct DetectorLoss {
  nn::Var total;
  double classification = 0.0;
  double regression = 0.0;
  double centerness = 0.0;
  int positives = 0;
};

class Detector {
 public:
  Detector(DetectorConfig config, std::uint64_t seed);

  const DetectorConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Raw head outputs per level, each [N, num_classes + 5, rows, cols].
  std::vector<nn::Var> forward_raw(const nn::Var& images) const;

  DetectorOutputMaps forward(const Image& image) const;
  std::vector<Detection> detect(const Image& image) const;

 private:
  DetectorConfig config_;
  nn::ParamSet params_;
};

// Image [H,W,3] -> tensor [1,3,H,W] (appended as sample n of a batch).
nn::Tensor image_batch(const std::vector<const Image*>& images);

DetectorOutputMaps maps_from_raw(const std::vector<nn::Var>& raw, int sample,
                                 const DetectorConfig& config, int image_width,
                                 int image_height);

std::vector<Detection> decode_detections(const DetectorOutputMaps& maps,
                                         const DetectorConfig& config);

std::vector<LevelTargets> encode_targets(const std::vector<Box>& gt_boxes,
                                         const DetectorConfig& config, int image_width,
                                         int image_height);

double centerness_target(const std::array<double, 4>& ltrb);

// gt_boxes[n] are the boxes of sample n of the batch behind `raw`.
DetectorLoss detector_loss(const std::vector<nn::Var>& raw,
                           const std::vector<std::vector<Box>>& gt_boxes,
                           const DetectorConfig& config, int image_width, int image_height);

}  // namespace mitodet
