#include "workflows.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "serialize.hpp"

namespace mitodet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Distinct streams for the three stages' initial weights and shuffling.
constexpr std::uint64_t kDetectorStream = 0;
constexpr std::uint64_t kClassifierStream = 1;
constexpr std::uint64_t kFusionStream = 2;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::function<void(const EpochRecord&)> progress(const WorkflowContext& ctx, const char* stage) {
  if (!ctx.log) return {};
  std::ostream* log = ctx.log;
  return [log, stage](const EpochRecord& r) {
    *log << stage << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss << " val "
         << r.validation_metric << std::endl;
  };
}

json stage_sidecar(const WorkflowContext& ctx, const TrainHistory& h) {
  json j = {{"seed", ctx.config.seed},
            {"config_hash", config_hash(ctx.config)},
            {"epochs_run", h.epochs.size()},
            {"epoch", h.best_epoch},
            {h.metric_name, h.best_metric},
            {"initial_" + h.metric_name, h.initial_metric}};
  return j;
}

}  // namespace

std::string config_hash(const RunConfig& config) { return json_hash(to_json(config)); }

std::string split_dir(const std::string& data, const std::string& split) {
  if (fs::exists(join(data, "annotations.json"))) return data;
  return join(data, split);
}

Dataset load_split(const std::string& data, const std::string& split) {
  const std::string dir = split_dir(data, split);
  const std::string ann = join(dir, "annotations.json");
  if (!fs::exists(ann)) fail(ErrorCode::NotFound, "no dataset at " + ann);
  return load_dataset(ann);
}

void gen_synth(const WorkflowContext& ctx, const std::string& out_dir) {
  const RunConfig& cfg = ctx.config;
  SynthConfig synth = cfg.data.synth;
  const int n_train = synth.image_count;
  const int n_val = cfg.data.validation_images;
  synth.image_count = n_train + n_val + cfg.data.test_images;
  const Dataset all = generate_synthetic_dataset(synth, cfg.seed);
  ensure_dir(out_dir);
  save_dataset(all.slice(0, n_train), join(out_dir, "train"));
  save_dataset(all.slice(n_train, n_train + n_val), join(out_dir, "val"));
  save_dataset(all.slice(n_train + n_val, all.images.size()), join(out_dir, "test"));
  const json manifest = {{"seed", cfg.seed},
                         {"config_hash", config_hash(cfg)},
                         {"config", to_json(cfg)["data"]},
                         {"splits", {{"train", n_train}, {"val", n_val}, {"test", cfg.data.test_images}}}};
  write_text(join(out_dir, "synth.json"), manifest.dump(2) + "\n");
}

TrainHistory train_detector_stage(const WorkflowContext& ctx, const std::string& data,
                                  const std::string& checkpoints) {
  const RunConfig& cfg = ctx.config;
  const Dataset train = load_split(data, "train");
  const Dataset val = load_split(data, "val");
  Detector detector(cfg.detector, cfg.seed + kDetectorStream);
  TrainOptions opt = cfg.detector_training.options(cfg.seed + kDetectorStream);
  opt.on_epoch = progress(ctx, "detector");
  const TrainHistory h = train_detector(detector, train, val, opt, cfg.eval_radius);
  ensure_dir(checkpoints);
  save_detector(detector, checkpoints, stage_sidecar(ctx, h).dump());
  write_history_csv(h, join(checkpoints, "detector_history.csv"));
  return h;
}

TrainHistory train_classifier_stage(const WorkflowContext& ctx, const std::string& data,
                                    const std::string& checkpoints) {
  const RunConfig& cfg = ctx.config;
  const Dataset train = load_split(data, "train");
  const PatchSet patches = build_balanced_patchset(train, cfg.negatives_per_positive, cfg.seed);
  SplitSpec spec = cfg.classifier_split;
  spec.seed = cfg.seed;
  const PatchSplit split = split_patchset(patches, spec);
  Falcnn model(cfg.classifier, cfg.seed + kClassifierStream);
  TrainOptions opt = cfg.classifier_training.options(cfg.seed + kClassifierStream);
  opt.on_epoch = progress(ctx, "classifier");
  const TrainHistory h = train_classifier(model, split, opt);
  ensure_dir(checkpoints);
  json side = stage_sidecar(ctx, h);
  side["test_accuracy"] = h.test_metric;
  side["split_sizes"] = {{"train", split.train.size()},
                         {"test", split.test.size()},
                         {"validation", split.validation.size()}};
  save_classifier(model, checkpoints, side.dump());
  write_history_csv(h, join(checkpoints, "classifier_history.csv"));
  return h;
}

TrainHistory train_fusion_stage(const WorkflowContext& ctx, const std::string& data,
                                const std::string& checkpoints) {
  const RunConfig& cfg = ctx.config;
  CompositeModel model{load_detector(checkpoints), load_classifier(checkpoints),
                       FusionNet(cfg.seed + kFusionStream), cfg.fusion, cfg.seed};
  const Dataset train = load_split(data, "train");
  const Dataset val = load_split(data, "val");
  TrainOptions opt = cfg.fusion_training.options(cfg.seed + kFusionStream);
  opt.on_epoch = progress(ctx, "fusion");
  const FusionTrainResult r = train_fusion_in_situ(model, train, val, opt, cfg.eval_radius);
  json side = stage_sidecar(ctx, r.history);
  side["detector_hash"] = r.detector_hash_after;
  side["classifier_hash"] = r.classifier_hash_after;
  side["weights_hash"] = params_hash(model.fusion.params());
  write_text(join(checkpoints, "fusion.json"), side.dump(2) + "\n");
  save_model(model, checkpoints);
  write_history_csv(r.history, join(checkpoints, "fusion_history.csv"));
  return r.history;
}

MetricsReport evaluate_stage(const WorkflowContext& ctx, const std::string& data,
                             const std::string& checkpoints, const std::string& out_dir,
                             const EvaluateOptions& options) {
  const RunConfig& cfg = ctx.config;
  const Dataset ds = load_split(data, options.split);
  MetricsReport report;
  if (options.oracle) {
    report.composite = evaluate_dataset(oracle_predictor(ds, cfg.detector.gt_box_size), ds, cfg.eval_radius);
  } else {
    const CompositeModel model = load_model(checkpoints);
    report.composite = evaluate_dataset(
        [&](const ImageRecord& r) { return composite_infer(r.image, model); }, ds, cfg.eval_radius);
    if (options.baseline) {
      report.baseline = evaluate_dataset(
          [&](const ImageRecord& r) { return baseline_infer(r.image, model); }, ds, cfg.eval_radius);
    }
  }
  ensure_dir(out_dir);
  const json extra = {{"seed", cfg.seed},
                      {"config_hash", config_hash(cfg)},
                      {"config", to_json(cfg)},
                      {"split", options.split},
                      {"radius", cfg.eval_radius},
                      {"oracle", options.oracle}};
  write_metrics_report(report, join(out_dir, "metrics.csv"), join(out_dir, "metrics.json"), extra.dump());
  return report;
}

std::vector<Detection> infer_image(const WorkflowContext& ctx, const std::string& checkpoints,
                                   const std::string& image_path, const std::string& out_path,
                                   bool baseline) {
  const CompositeModel model = load_model(checkpoints);
  const Image image = read_png(image_path);
  const std::vector<Detection> dets = baseline ? baseline_infer(image, model) : composite_infer(image, model);
  json list = json::array();
  for (const auto& d : dets) {
    list.push_back({{"x1", d.box.x1}, {"y1", d.box.y1}, {"x2", d.box.x2}, {"y2", d.box.y2},
                    {"class_id", d.class_id}, {"score", d.score}});
  }
  const json doc = {{"image", image_path},
                    {"model", baseline ? "baseline" : "composite"},
                    {"seed", ctx.config.seed},
                    {"config_hash", config_hash(ctx.config)},
                    {"detections", list}};
  if (!out_path.empty()) {
    const fs::path parent = fs::path(out_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    write_text(out_path, doc.dump(2) + "\n");
  }
  return dets;
}

std::array<std::uint8_t, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto channel = [](double t) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  };
  return {channel(3.0 * v), channel(3.0 * v - 1.0), channel(3.0 * v - 2.0)};
}

std::vector<std::string> export_attention(const WorkflowContext& ctx, const std::string& data,
                                          const std::string& split, const std::string& checkpoints,
                                          const std::vector<int>& ids, const std::string& out_dir) {
  (void)ctx;
  const Falcnn classifier = load_classifier(checkpoints);
  const Dataset ds = load_split(data, split);
  if (ids.empty()) fail(ErrorCode::InvalidArgument, "export-attention: no ids given");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.annotations.size()) {
      fail(ErrorCode::NotFound, "export-attention: unknown annotation id " + std::to_string(id) + " (dataset has " +
                                    std::to_string(ds.annotations.size()) + ")");
    }
  }
  ensure_dir(out_dir);
  std::vector<std::string> written;
  const int s = kPatchSize;
  for (int id : ids) {
    const PointAnnotation& a = ds.annotations[id];
    const Patch patch = extract_patch(ds.image(a.image_id).image, {a.x, a.y}, s);
    const FalcnnOutput out = classifier.infer(patch);
    const nn::Tensor& map = out.deepest_attention();
    const int scale = s / map.dim(0);
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(2 * s) * s * 3);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        std::uint8_t* left = &rgb[(static_cast<std::size_t>(y) * 2 * s + x) * 3];
        for (int c = 0; c < 3; ++c) {
          const float v = patch.pixels[(static_cast<std::size_t>(y) * s + x) * 3 + c];
          left[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
        const auto color = heat_color(map[static_cast<std::size_t>(y / scale) * map.dim(1) + x / scale]);
        std::copy(color.begin(), color.end(), &rgb[(static_cast<std::size_t>(y) * 2 * s + s + x) * 3]);
      }
    }
    std::ostringstream name;
    name << "attention_" << std::setw(5) << std::setfill('0') << id << ".png";
    const std::string path = join(out_dir, name.str());
    write_png_rgb8(path, 2 * s, s, rgb);
    written.push_back(path);
  }
  return written;
}

}  // namespace mitodet
