#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "eval.hpp"
#include "pipeline.hpp"

namespace mitodet {

// Directory layout used by the command-line workflows:
//   <data>/{train,val,test}/annotations.json + images/
//   <checkpoints>/{detector,classifier,fusion}.{bin,json}, *_history.csv, manifest.json

struct WorkflowContext {
  RunConfig config;
  std::ostream* log = nullptr;  // per-epoch progress, optional
};

std::string config_hash(const RunConfig& config);

// Dataset directory for a split, or `data` itself when it holds annotations.json.
std::string split_dir(const std::string& data, const std::string& split);
Dataset load_split(const std::string& data, const std::string& split);

void gen_synth(const WorkflowContext& ctx, const std::string& out_dir);

TrainHistory train_detector_stage(const WorkflowContext& ctx, const std::string& data,
                                  const std::string& checkpoints);
TrainHistory train_classifier_stage(const WorkflowContext& ctx, const std::string& data,
                                    const std::string& checkpoints);
TrainHistory train_fusion_stage(const WorkflowContext& ctx, const std::string& data,
                                const std::string& checkpoints);

struct EvaluateOptions {
  std::string split = "test";
  bool baseline = false;
  bool oracle = false;  // score the ground truth itself (harness self-check)
};

MetricsReport evaluate_stage(const WorkflowContext& ctx, const std::string& data,
                             const std::string& checkpoints, const std::string& out_dir,
                             const EvaluateOptions& options);

// Detections for one PNG written as JSON.
std::vector<Detection> infer_image(const WorkflowContext& ctx, const std::string& checkpoints,
                                   const std::string& image_path, const std::string& out_path,
                                   bool baseline);

// Heatmap color ramp: black -> red -> yellow -> white as v goes 0 -> 1.
std::array<std::uint8_t, 3> heat_color(double v);

// One <out>/attention_<id>.png per annotation index: the 56x56 patch on the
// left, the 14x14 deepest attention map upsampled 4x (nearest) on the right.
std::vector<std::string> export_attention(const WorkflowContext& ctx, const std::string& data,
                                          const std::string& split, const std::string& checkpoints,
                                          const std::vector<int>& ids, const std::string& out_dir);

}  // namespace mitodet
