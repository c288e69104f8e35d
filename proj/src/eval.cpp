#include "eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace mitodet {

using nlohmann::json;

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Point>& gt,
                             double radius) {
  if (!(radius > 0.0)) fail(ErrorCode::InvalidArgument, "match_detections: radius must be > 0");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> taken(gt.size(), false);
  MatchResult r;
  for (std::size_t d : order) {
    std::size_t best = gt.size();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double dist = center_distance(dets[d], gt[g]);
      if (dist <= radius && dist < best_dist) {
        best = g;
        best_dist = dist;
      }
    }
    if (best < gt.size()) {
      taken[best] = true;
      r.pairs.push_back({d, best, best_dist});
    }
  }
  r.true_positives = r.pairs.size();
  r.false_positives = dets.size() - r.true_positives;
  r.false_negatives = gt.size() - r.true_positives;
  return r;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

Metrics evaluate_dataset(const Predictor& predict, const Dataset& dataset, double radius) {
  if (dataset.images.empty()) fail(ErrorCode::InvalidArgument, "evaluate_dataset: empty dataset");
  Metrics m;
  for (const auto& rec : dataset.images) {
    const MatchResult r = match_detections(predict(rec), dataset.mitotic_points(rec.id), radius);
    m.per_image.push_back({rec.id, r.true_positives, r.false_positives, r.false_negatives,
                           f1_score(r.true_positives, r.false_positives, r.false_negatives)});
    m.tp += r.true_positives;
    m.fp += r.false_positives;
    m.fn += r.false_negatives;
  }
  m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = f1_score(m.tp, m.fp, m.fn);
  return m;
}

Predictor oracle_predictor(const Dataset& dataset, double box_size) {
  return [&dataset, box_size](const ImageRecord& rec) {
    std::vector<Detection> out;
    for (const Point& p : dataset.mitotic_points(rec.id)) {
      out.push_back({clamp_box(box_around(p, box_size), rec.width(), rec.height()), 0, 1.0});
    }
    return out;
  };
}

namespace {

json summary(const Metrics& m) {
  return {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"precision", m.precision},
          {"recall", m.recall}, {"f1", m.f1}};
}

void rows(std::ostream& os, const char* model, const Metrics& m) {
  for (const auto& r : m.per_image) {
    os << model << ',' << r.image_id << ',' << r.tp << ',' << r.fp << ',' << r.fn << ','
       << std::setprecision(17) << r.f1 << '\n';
  }
}

}  // namespace

void write_metrics_report(const MetricsReport& report, const std::string& csv_path,
                          const std::string& json_path, const std::string& extra_json) {
  std::ofstream csv(csv_path);
  if (!csv) fail(ErrorCode::Io, "cannot write " + csv_path);
  csv << "model,image_id,tp,fp,fn,f1\n";
  rows(csv, "composite", report.composite);
  if (report.baseline) rows(csv, "baseline", *report.baseline);

  json doc = summary(report.composite);
  doc["model"] = "composite";
  doc["composite"] = summary(report.composite);
  if (report.baseline) doc["baseline"] = summary(*report.baseline);
  if (!extra_json.empty()) {
    const json more = json::parse(extra_json);
    for (auto& [k, v] : more.items()) doc[k] = v;
  }
  std::ofstream js(json_path);
  if (!js) fail(ErrorCode::Io, "cannot write " + json_path);
  js << doc.dump(2) << '\n';
}

}  // namespace mitodet
