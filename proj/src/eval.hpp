#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "geometry.hpp"

namespace mitodet {

struct MatchedPair {
  std::size_t detection = 0;
  std::size_t ground_truth = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::vector<MatchedPair> pairs;
};

// Greedy center-distance matching: detections in descending score order (ties
// by index) each take the nearest unmatched point within radius.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Point>& gt,
                             double radius = 30.0);

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);

struct ImageMetrics {
  int image_id = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double f1 = 0.0;
};

struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ImageMetrics> per_image;
};

using Predictor = std::function<std::vector<Detection>(const ImageRecord&)>;

// Micro-averaged over the dataset's images.
Metrics evaluate_dataset(const Predictor& predict, const Dataset& dataset, double radius = 30.0);

// Predictor emitting a gt-sized box on every mitotic point.
Predictor oracle_predictor(const Dataset& dataset, double box_size);

struct MetricsReport {
  Metrics composite;
  std::optional<Metrics> baseline;
};

// <stem>.csv (per-image rows) and <stem>.json (summary plus `extra` fields).
void write_metrics_report(const MetricsReport& report, const std::string& csv_path,
                          const std::string& json_path, const std::string& extra_json);

}  // namespace mitodet
