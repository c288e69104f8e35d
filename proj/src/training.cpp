#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "error.hpp"
#include "eval.hpp"
#include "rng.hpp"

namespace mitodet {

namespace {

constexpr std::uint64_t kEpochStream = 0x9E3779B97F4A7C15ULL;

// Mirror a square RGB buffer: bit 0 horizontal, bit 1 vertical, bit 2 transpose.
void transform_square(std::vector<float>& px, int side, int mode) {
  if (mode == 0) return;
  std::vector<float> out(px.size());
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      int sx = x, sy = y;
      if (mode & 4) std::swap(sx, sy);
      if (mode & 1) sx = side - 1 - sx;
      if (mode & 2) sy = side - 1 - sy;
      for (int c = 0; c < 3; ++c) {
        out[(static_cast<std::size_t>(y) * side + x) * 3 + c] =
            px[(static_cast<std::size_t>(sy) * side + sx) * 3 + c];
      }
    }
  }
  px.swap(out);
}

// Forward map of a point under transform_square's pixel mapping.
Box transform_box(const Box& b, double side, int mode) {
  Box r = b;
  if (mode & 1) r = {side - r.x2, r.y1, side - r.x1, r.y2};
  if (mode & 2) r = {r.x1, side - r.y2, r.x2, side - r.y1};
  if (mode & 4) r = {r.y1, r.x1, r.y2, r.x2};
  return r;
}

template <class Params>
bool finite_params(const Params& params) {
  for (const auto& p : params.items()) {
    for (double v : p.var->value.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << "epoch,lr,loss";
  if (!history.epochs.empty()) {
    for (const auto& [name, value] : history.epochs.front().components) out << ',' << name;
  }
  out << ',' << (history.metric_name.empty() ? "validation_metric" : history.metric_name) << '\n';
  out << std::setprecision(17);
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << e.lr << ',' << e.loss;
    for (const auto& [name, value] : e.components) out << ',' << value;
    out << ',' << e.validation_metric << '\n';
  }
}

std::vector<Box> ground_truth_boxes(const Dataset& dataset, int image_id, double box_size) {
  const ImageRecord& rec = dataset.image(image_id);
  std::vector<Box> boxes;
  for (const Point& p : dataset.mitotic_points(image_id)) {
    boxes.push_back(clamp_box(box_around(p, box_size), rec.width(), rec.height()));
  }
  return boxes;
}

TrainHistory train_detector(Detector& detector, const Dataset& train, const Dataset& validation,
                            const TrainOptions& options, double match_radius) {
  if (train.images.empty()) fail(ErrorCode::InvalidArgument, "train_detector: empty training set");
  const bool any_positive = std::any_of(train.annotations.begin(), train.annotations.end(),
                                        [](const auto& a) { return a.label == Label::Mitotic; });
  if (!any_positive) {
    fail(ErrorCode::InvalidArgument,
         "train_detector: training set has no mitotic annotations to build boxes from");
  }
  const DetectorConfig& cfg = detector.config();
  for (const auto& rec : train.images) {
    if (rec.width() != cfg.input_size || rec.height() != cfg.input_size) {
      fail(ErrorCode::InvalidArgument, "train_detector: image " + std::to_string(rec.id) +
                                           " does not match detector input_size");
    }
  }
  const Dataset& val = validation.images.empty() ? train : validation;

  TrainHistory history;
  history.metric_name = "validation_f1";
  auto validate = [&] {
    return evaluate_dataset([&](const ImageRecord& r) { return detector.detect(r.image); }, val,
                            match_radius)
        .f1;
  };
  history.initial_metric = validate();
  history.best_metric = history.initial_metric;
  nn::ParamSet best = detector.params().clone();

  Sgd sgd(detector.params(), options.momentum, options.weight_decay);
  std::vector<std::size_t> order(train.images.size());
  const int side = cfg.input_size;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = lr_at_epoch(options.schedule, epoch);
    Rng rng(options.seed ^ (kEpochStream * static_cast<std::uint64_t>(epoch + 1)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0, cls_sum = 0.0, reg_sum = 0.0, ctr_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<Image> images;
      std::vector<std::vector<Box>> boxes;
      for (std::size_t k = start; k < end; ++k) {
        const ImageRecord& rec = train.images[order[k]];
        Image img = rec.image;
        auto gt = ground_truth_boxes(train, rec.id, cfg.gt_box_size);
        const int mode = options.augment ? static_cast<int>(rng.index(8)) : 0;
        transform_square(img.pixels, side, mode);
        for (Box& b : gt) b = transform_box(b, side, mode);
        images.push_back(std::move(img));
        boxes.push_back(std::move(gt));
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : images) ptrs.push_back(&im);

      detector.params().zero_grad();
      auto raw = detector.forward_raw(nn::constant(image_batch(ptrs)));
      DetectorLoss loss = detector_loss(raw, boxes, cfg, side, side);
      nn::backward(loss.total);
      sgd.clip_grad_norm(options.clip_norm);
      sgd.step(lr);

      loss_sum += loss.total->value[0];
      cls_sum += loss.classification;
      reg_sum += loss.regression;
      ctr_sum += loss.centerness;
      ++batches;
    }
    if (!finite_params(detector.params())) fail(ErrorCode::Numeric, "detector parameters diverged");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / batches;
    rec.components = {{"classification", cls_sum / batches},
                      {"regression", reg_sum / batches},
                      {"centerness", ctr_sum / batches}};
    rec.validation_metric = validate();
    if (rec.validation_metric > history.best_metric) {
      history.best_metric = rec.validation_metric;
      history.best_epoch = epoch;
      best.copy_values_from(detector.params());
    }
    history.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  detector.params().copy_values_from(best);
  return history;
}

double classification_accuracy(const Falcnn& model, const PatchSet& set) {
  if (set.patches.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < set.patches.size(); start += kChunk) {
    std::vector<const Patch*> batch;
    for (std::size_t k = start; k < std::min(set.patches.size(), start + kChunk); ++k) {
      batch.push_back(&set.patches[k]);
    }
    const auto outs = model.infer(batch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const Label predicted = outs[k].p_mitosis >= 0.5 ? Label::Mitotic : Label::NonMitotic;
      if (predicted == batch[k]->label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.patches.size());
}

TrainHistory train_classifier(Falcnn& model, const PatchSplit& split, const TrainOptions& options) {
  if (split.train.patches.empty()) fail(ErrorCode::InvalidArgument, "train_classifier: empty training set");
  const PatchSet& val = split.validation.patches.empty() ? split.train : split.validation;

  TrainHistory history;
  history.metric_name = "validation_accuracy";
  history.initial_metric = classification_accuracy(model, val);
  history.best_metric = history.initial_metric;
  nn::ParamSet best = model.params().clone();

  Sgd sgd(model.params(), options.momentum, options.weight_decay);
  std::vector<std::size_t> order(split.train.patches.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = lr_at_epoch(options.schedule, epoch);
    Rng rng(options.seed ^ (kEpochStream * static_cast<std::uint64_t>(epoch + 1)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<Patch> patches;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        Patch p = split.train.patches[order[k]];
        if (options.augment) transform_square(p.pixels, p.size, static_cast<int>(rng.index(8)));
        labels.push_back(static_cast<int>(p.label));
        patches.push_back(std::move(p));
      }
      std::vector<const Patch*> ptrs;
      for (const auto& p : patches) ptrs.push_back(&p);

      model.params().zero_grad();
      FalcnnTrace trace = model.forward_graph(nn::constant(patch_batch(ptrs)));
      nn::Var loss = nn::softmax_cross_entropy(trace.logits, labels);
      if (!std::isfinite(loss->value[0])) fail(ErrorCode::Numeric, "classifier loss is not finite");
      nn::backward(loss);
      sgd.clip_grad_norm(options.clip_norm);
      sgd.step(lr);
      loss_sum += loss->value[0];
      ++batches;
    }
    if (!finite_params(model.params())) fail(ErrorCode::Numeric, "classifier parameters diverged");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / batches;
    rec.components = {{"cross_entropy", loss_sum / batches}};
    rec.validation_metric = classification_accuracy(model, val);
    if (rec.validation_metric > history.best_metric) {
      history.best_metric = rec.validation_metric;
      history.best_epoch = epoch;
      best.copy_values_from(model.params());
    }
    history.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  model.params().copy_values_from(best);
  history.test_metric = classification_accuracy(model, split.test);
  return history;
}

}  // namespace mitodet
