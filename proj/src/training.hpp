#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "detector.hpp"
#include "falcnn.hpp"
#include "optim.hpp"

namespace mitodet {

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> components;
  double validation_metric = 0.0;
};

struct TrainOptions {
  int epochs = 30;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 4;
  double clip_norm = 10.0;
  bool augment = true;
  std::uint64_t seed = 7;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainHistory {
  std::string metric_name;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // -1: the initial parameters were never beaten
  double best_metric = 0.0;
  double initial_metric = 0.0;
  double test_metric = 0.0;  // classifier only: accuracy of the retained checkpoint
};

void write_history_csv(const TrainHistory& history, const std::string& path);

// Ground-truth boxes for the detector: fixed-size boxes on mitotic points.
std::vector<Box> ground_truth_boxes(const Dataset& dataset, int image_id, double box_size);

// Best-by-validation-F1 parameters are left in `detector` on return.
TrainHistory train_detector(Detector& detector, const Dataset& train, const Dataset& validation,
                            const TrainOptions& options, double match_radius);

// Best-by-validation-accuracy parameters are left in `model`; test accuracy
// of those parameters is reported.
TrainHistory train_classifier(Falcnn& model, const PatchSplit& split, const TrainOptions& options);

double classification_accuracy(const Falcnn& model, const PatchSet& set);

}  // namespace mitodet
