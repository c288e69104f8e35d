#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "serialize.hpp"

namespace mitodet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEpochStream = 0xD1B54A32D192ED03ULL;

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
}

void check_sidecar(const json& j, const std::string& path, const char* stage) {
  if (!j.is_object() || !j.contains("schema_version")) {
    fail(ErrorCode::Parse, path + ": missing schema_version");
  }
  if (j["schema_version"] != kSchemaVersion) {
    fail(ErrorCode::Version, path + ": schema version " + j["schema_version"].dump() +
                                 " unsupported (expected " + std::to_string(kSchemaVersion) + ")");
  }
  if (j.value("stage", "") != stage) fail(ErrorCode::Parse, path + ": not a " + std::string(stage) + " checkpoint");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
}

json merged_sidecar(json base, const std::string& extra) {
  if (!extra.empty()) {
    const json more = json::parse(extra);
    for (auto& [k, v] : more.items()) base[k] = v;
  }
  return base;
}

}  // namespace

std::vector<Detection> baseline_infer(const Image& image, const CompositeModel& model) {
  return model.detector.detect(image);
}

std::vector<Detection> composite_infer(const Image& image, const CompositeModel& model,
                                       InferenceTrace* trace) {
  const std::vector<Detection> dets = model.detector.detect(image);
  if (trace) *trace = {dets.size(), 0, 0, 0};
  if (dets.empty()) return {};

  std::vector<Patch> patches;
  patches.reserve(dets.size());
  for (const auto& d : dets) patches.push_back(extract_patch(image, center(d.box), kPatchSize));
  std::vector<const Patch*> batch;
  for (const auto& p : patches) batch.push_back(&p);
  const auto cls = model.classifier.infer(batch);

  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const FusionInput in = assemble_fusion_input(dets[i], cls[i].p_mitosis,
                                                 cls[i].deepest_attention(), image.width, image.height);
    const Adjustment adj = model.fusion.forward(in);
    Detection adjusted = apply_adjustment(dets[i], adj, image.width, image.height,
                                          model.fusion_config.max_offset);
    if (adjusted.score >= model.detector.config().score_threshold) out.push_back(adjusted);
  }
  if (trace) {
    trace->patches_sampled = patches.size();
    trace->classifier_evaluations = cls.size();
    trace->fusion_inputs = dets.size();
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

FusionCandidates prepare_candidates(const ImageRecord& rec, const Dataset& dataset,
                                    const CompositeModel& model) {
  FusionCandidates c;
  c.image_id = rec.id;
  c.width = rec.width();
  c.height = rec.height();
  c.ground_truth = dataset.mitotic_points(rec.id);
  c.detections = model.detector.detect(rec.image);
  c.inputs = nn::Tensor({static_cast<int>(c.detections.size()), kFusionInputSize});
  if (c.detections.empty()) return c;
  std::vector<Patch> patches;
  for (const auto& d : c.detections) patches.push_back(extract_patch(rec.image, center(d.box), kPatchSize));
  std::vector<const Patch*> batch;
  for (const auto& p : patches) batch.push_back(&p);
  const auto cls = model.classifier.infer(batch);
  for (std::size_t i = 0; i < c.detections.size(); ++i) {
    const FusionInput in = assemble_fusion_input(c.detections[i], cls[i].p_mitosis,
                                                 cls[i].deepest_attention(), c.width, c.height);
    std::copy(in.values.begin(), in.values.end(), c.inputs.data() + i * kFusionInputSize);
  }
  return c;
}

std::vector<Detection> fuse_candidates(const FusionCandidates& c, const CompositeModel& model) {
  if (c.detections.empty()) return {};
  nn::NoGradGuard no_grad;
  const nn::Tensor raw = model.fusion.forward(nn::constant(c.inputs))->value;
  std::vector<Detection> out;
  for (std::size_t i = 0; i < c.detections.size(); ++i) {
    Detection d = apply_adjustment(c.detections[i], {raw[i * 3], raw[i * 3 + 1], raw[i * 3 + 2]},
                                   c.width, c.height, model.fusion_config.max_offset);
    if (d.score >= model.detector.config().score_threshold) out.push_back(d);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

FusionTrainResult train_fusion_in_situ(CompositeModel& model, const Dataset& train,
                                       const Dataset& validation, const TrainOptions& options,
                                       double match_radius) {
  if (train.images.empty()) fail(ErrorCode::InvalidArgument, "train_fusion: empty training set");
  model.frozen_detector = true;
  model.frozen_classifier = true;

  FusionTrainResult result;
  result.detector_hash_before = params_hash(model.detector.params());
  result.classifier_hash_before = params_hash(model.classifier.params());

  std::vector<FusionCandidates> train_c, val_c;
  for (const auto& rec : train.images) train_c.push_back(prepare_candidates(rec, train, model));
  const Dataset& val = validation.images.empty() ? train : validation;
  for (const auto& rec : val.images) val_c.push_back(prepare_candidates(rec, val, model));

  auto validate = [&] {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& c : val_c) {
      const MatchResult m = match_detections(fuse_candidates(c, model), c.ground_truth, match_radius);
      tp += m.true_positives;
      fp += m.false_positives;
      fn += m.false_negatives;
    }
    return f1_score(tp, fp, fn);
  };

  TrainHistory& history = result.history;
  history.metric_name = "validation_f1";
  history.initial_metric = validate();
  history.best_metric = history.initial_metric;
  nn::ParamSet best = model.fusion.params().clone();

  Sgd sgd(model.fusion.params(), options.momentum, options.weight_decay);
  std::vector<std::size_t> order(train_c.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = lr_at_epoch(options.schedule, epoch);
    Rng rng(options.seed ^ (kEpochStream * static_cast<std::uint64_t>(epoch + 1)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t idx : order) {
      const FusionCandidates& c = train_c[idx];
      if (c.detections.empty()) continue;
      model.fusion.params().zero_grad();
      nn::Var raw = model.fusion.forward(nn::constant(c.inputs));
      nn::Var loss = fusion_loss_graph(raw, c.detections, c.ground_truth, c.width, c.height,
                                       model.fusion_config);
      if (!std::isfinite(loss->value[0])) fail(ErrorCode::Numeric, "fusion loss is not finite");
      nn::backward(loss);
      sgd.clip_grad_norm(options.clip_norm);
      sgd.step(lr);
      loss_sum += loss->value[0];
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = steps ? loss_sum / steps : 0.0;
    rec.components = {{"fusion_loss", rec.loss}};
    rec.validation_metric = validate();
    if (rec.validation_metric > history.best_metric) {
      history.best_metric = rec.validation_metric;
      history.best_epoch = epoch;
      best.copy_values_from(model.fusion.params());
    }
    history.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  model.fusion.params().copy_values_from(best);

  result.detector_hash_after = params_hash(model.detector.params());
  result.classifier_hash_after = params_hash(model.classifier.params());
  if (result.detector_hash_after != result.detector_hash_before ||
      result.classifier_hash_after != result.classifier_hash_before) {
    fail(ErrorCode::Internal, "frozen upstream parameters changed during fusion training");
  }
  return result;
}

void save_detector(const Detector& d, const std::string& dir, const std::string& sidecar_extra) {
  ensure_dir(dir);
  write_params(path_in(dir, "detector.bin"), d.params());
  json side = merged_sidecar({{"schema_version", kSchemaVersion},
                              {"stage", "detector"},
                              {"config", detector_config_json(d.config())},
                              {"weights_hash", params_hash(d.params())}},
                             sidecar_extra);
  write_text(path_in(dir, "detector.json"), side.dump(2) + "\n");
}

Detector load_detector(const std::string& dir) {
  const std::string side_path = path_in(dir, "detector.json");
  if (!fs::exists(side_path)) fail(ErrorCode::Prerequisite, "missing detector checkpoint in " + dir);
  const json side = read_json(side_path);
  check_sidecar(side, side_path, "detector");
  Detector d(detector_config_from_json(side.at("config")), 0);
  read_params(path_in(dir, "detector.bin"), d.params());
  return d;
}

void save_classifier(const Falcnn& c, const std::string& dir, const std::string& sidecar_extra) {
  ensure_dir(dir);
  write_params(path_in(dir, "classifier.bin"), c.params());
  json side = merged_sidecar({{"schema_version", kSchemaVersion},
                              {"stage", "classifier"},
                              {"config", classifier_config_json(c.config())},
                              {"weights_hash", params_hash(c.params())}},
                             sidecar_extra);
  write_text(path_in(dir, "classifier.json"), side.dump(2) + "\n");
}

Falcnn load_classifier(const std::string& dir) {
  const std::string side_path = path_in(dir, "classifier.json");
  if (!fs::exists(side_path)) fail(ErrorCode::Prerequisite, "missing classifier checkpoint in " + dir);
  const json side = read_json(side_path);
  check_sidecar(side, side_path, "classifier");
  Falcnn c(classifier_config_from_json(side.at("config")), 0);
  read_params(path_in(dir, "classifier.bin"), c.params());
  return c;
}

void save_model(const CompositeModel& model, const std::string& dir) {
  ensure_dir(dir);
  const std::string det_side = path_in(dir, "detector.json");
  const std::string cls_side = path_in(dir, "classifier.json");
  // Keep existing stage sidecars (training metadata) when their weights match.
  auto keep = [&](const std::string& side, const nn::ParamSet& p) {
    if (!fs::exists(side)) return false;
    try {
      return read_json(side).value("weights_hash", "") == params_hash(p);
    } catch (const Error&) {
      return false;
    }
  };
  if (!keep(det_side, model.detector.params())) save_detector(model.detector, dir, "");
  if (!keep(cls_side, model.classifier.params())) save_classifier(model.classifier, dir, "");

  write_params(path_in(dir, "fusion.bin"), model.fusion.params());
  json layers = json::array();
  for (const auto& p : model.fusion.params().items()) layers.push_back({{"name", p.name}, {"shape", p.var->value.shape()}});
  const json fusion_cfg = fusion_config_json(model.fusion_config);
  json fusion_side = {{"schema_version", kSchemaVersion}, {"stage", "fusion"},
                      {"layer_shapes", layers},           {"seed", model.seed},
                      {"lambda", model.fusion_config.lambda}, {"radius", model.fusion_config.radius},
                      {"config", fusion_cfg},             {"weights_hash", params_hash(model.fusion.params())}};
  if (fs::exists(path_in(dir, "fusion.json"))) {
    try {
      const json old = read_json(path_in(dir, "fusion.json"));
      if (old.value("weights_hash", "") == fusion_side["weights_hash"]) {
        for (auto& [k, v] : old.items()) {
          if (!fusion_side.contains(k)) fusion_side[k] = v;
        }
      }
    } catch (const Error&) {
    }
  }
  write_text(path_in(dir, "fusion.json"), fusion_side.dump(2) + "\n");

  const json manifest = {
      {"schema_version", kSchemaVersion},
      {"stages", {{"detector", "detector.bin"}, {"classifier", "classifier.bin"}, {"fusion", "fusion.bin"}}},
      {"config_hashes",
       {{"detector", json_hash(detector_config_json(model.detector.config()))},
        {"classifier", json_hash(classifier_config_json(model.classifier.config()))},
        {"fusion", json_hash(fusion_cfg)}}},
      {"weights_hashes",
       {{"detector", params_hash(model.detector.params())},
        {"classifier", params_hash(model.classifier.params())},
        {"fusion", params_hash(model.fusion.params())}}},
      {"seed", model.seed}};
  write_text(path_in(dir, "manifest.json"), manifest.dump(2) + "\n");
}

CompositeModel load_model(const std::string& dir) {
  const std::string manifest_path = path_in(dir, "manifest.json");
  if (!fs::exists(manifest_path)) fail(ErrorCode::NotFound, "no composite model manifest in " + dir);
  const json manifest = read_json(manifest_path);
  if (!manifest.is_object() || !manifest.contains("schema_version")) {
    fail(ErrorCode::Parse, manifest_path + ": missing schema_version");
  }
  if (manifest["schema_version"] != kSchemaVersion) {
    fail(ErrorCode::Version, manifest_path + ": schema version " + manifest["schema_version"].dump() +
                                 " unsupported (expected " + std::to_string(kSchemaVersion) + ")");
  }
  const json fusion_side = read_json(path_in(dir, "fusion.json"));
  check_sidecar(fusion_side, path_in(dir, "fusion.json"), "fusion");

  CompositeModel model{load_detector(dir), load_classifier(dir), FusionNet(0),
                       fusion_config_from_json(fusion_side.value("config", json::object())),
                       manifest.value("seed", std::uint64_t{0})};
  read_params(path_in(dir, "fusion.bin"), model.fusion.params());
  return model;
}

}  // namespace mitodet
