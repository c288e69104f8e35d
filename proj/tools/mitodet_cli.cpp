// mitodet: command-line front end over the C API.
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mitodet/mitodet.h"

namespace {

struct Common {
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::string preset;
  bool quiet = false;
};

int report(mfd_status s) {
  if (s == MFD_OK) return 0;
  std::string msg = mfd_last_error();
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "error: %s: %s\n", mfd_status_category(s), msg.c_str());
  return static_cast<int>(s);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file (overrides the preset)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--preset", c.preset, "Scale preset")->check(CLI::IsMember({"desk", "paper"}));
}

// Builds the override JSON handed to the library; the library validates it.
std::optional<std::string> overrides(const Common& c, const nlohmann::json& extra, int& rc) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) {
      std::fprintf(stderr, "error: not_found: cannot open config %s\n", c.config_path.c_str());
      rc = MFD_ERR_NOT_FOUND;
      return std::nullopt;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      std::fprintf(stderr, "error: parse: %s: %s\n", c.config_path.c_str(), e.what());
      rc = MFD_ERR_PARSE;
      return std::nullopt;
    }
    if (!j.is_object()) {
      std::fprintf(stderr, "error: parse: %s: config must be a JSON object\n", c.config_path.c_str());
      rc = MFD_ERR_PARSE;
      return std::nullopt;
    }
  }
  if (!c.preset.empty()) j["preset"] = c.preset;
  if (c.seed) j["seed"] = *c.seed;
  j.merge_patch(extra);
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mitosis detection with feedback-attention false positive reduction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mfd_version()));

  Common common;
  std::string out, data, checkpoints, split = "test", image;
  std::optional<int> image_size, count;
  bool baseline = false, oracle = false;
  std::vector<int> ids;

  auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic train/val/test dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--image-size", image_size, "Image side in pixels (>= 112)");
  gen->add_option("--count", count, "Number of training images");

  std::vector<CLI::App*> trainers;
  for (const char* name : {"train-detector", "train-classifier", "train-fusion"}) {
    auto* cmd = app.add_subcommand(name);
    add_common(cmd, common);
    cmd->add_option("--data", data, "Dataset root (with train/ and val/)")->required();
    cmd->add_option("--out,--checkpoints", checkpoints, "Checkpoint directory")->required();
    cmd->add_flag("--quiet", common.quiet, "No per-epoch progress");
    trainers.push_back(cmd);
  }
  trainers[0]->description("Train the detector stage");
  trainers[1]->description("Train the patch classifier stage");
  trainers[2]->description("Train the fusion network on frozen upstream stages");

  auto* eval = app.add_subcommand("evaluate", "Score a model on a dataset split");
  add_common(eval, common);
  eval->add_option("--data", data, "Dataset root or split directory")->required();
  eval->add_option("--checkpoints", checkpoints, "Composite model directory");
  eval->add_option("--split", split, "Split name under the dataset root");
  eval->add_option("--out", out, "Directory for metrics.csv / metrics.json")->required();
  eval->add_flag("--baseline", baseline, "Also report the bare detector");
  eval->add_flag("--oracle", oracle, "Score ground-truth boxes (harness self-check)");

  auto* infer = app.add_subcommand("infer", "Detect mitotic figures in one PNG");
  add_common(infer, common);
  infer->add_option("--checkpoints", checkpoints, "Composite model directory")->required();
  infer->add_option("--image", image, "Input PNG")->required();
  infer->add_option("--out", out, "Output JSON (stdout summary if omitted)");
  infer->add_flag("--baseline", baseline, "Use the bare detector");

  auto* att = app.add_subcommand("export-attention", "Write attention heatmaps for annotation ids");
  add_common(att, common);
  att->add_option("--checkpoints", checkpoints, "Directory holding the classifier checkpoint")->required();
  att->add_option("--data", data, "Dataset root or split directory")->required();
  att->add_option("--split", split, "Split name under the dataset root");
  att->add_option("--ids", ids, "Annotation indices")->required()->delimiter(',');
  att->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "error: usage: %s\n", msg.c_str());
    return 64;
  }

  int rc = 0;
  nlohmann::json extra = nlohmann::json::object();
  if (gen->parsed()) {
    if (image_size) extra["data"]["image_size"] = *image_size;
    if (count) extra["data"]["train_images"] = *count;
  }
  const auto cfg = overrides(common, extra, rc);
  if (!cfg) return rc;
  const char* cj = cfg->c_str();
  const int log = common.quiet ? 0 : 1;

  if (gen->parsed()) return report(mfd_gen_synth(cj, out.c_str()));
  if (trainers[0]->parsed()) return report(mfd_train_detector(cj, data.c_str(), checkpoints.c_str(), log));
  if (trainers[1]->parsed()) return report(mfd_train_classifier(cj, data.c_str(), checkpoints.c_str(), log));
  if (trainers[2]->parsed()) return report(mfd_train_fusion(cj, data.c_str(), checkpoints.c_str(), log));
  if (eval->parsed()) {
    if (!oracle && checkpoints.empty()) {
      std::fprintf(stderr, "error: usage: evaluate needs --checkpoints unless --oracle is set\n");
      return 64;
    }
    return report(mfd_evaluate(cj, data.c_str(), split.c_str(), checkpoints.c_str(), out.c_str(), baseline, oracle));
  }
  if (infer->parsed()) {
    if (!out.empty()) return report(mfd_infer(cj, checkpoints.c_str(), image.c_str(), out.c_str(), baseline));
    mfd_model* model = nullptr;
    if (int r = report(mfd_model_load(checkpoints.c_str(), &model))) return r;
    mfd_detections* dets = nullptr;
    const int r = report(mfd_model_infer_png(model, image.c_str(), baseline ? 0 : 1, &dets));
    if (r == 0) {
      for (size_t i = 0; i < mfd_detections_count(dets); ++i) {
        mfd_detection d;
        mfd_detections_get(dets, i, &d);
        std::printf("%.3f %.3f %.3f %.3f %d %.6f\n", d.x1, d.y1, d.x2, d.y2, d.class_id, d.score);
      }
    }
    mfd_detections_free(dets);
    mfd_model_free(model);
    return r;
  }
  if (att->parsed()) {
    return report(mfd_export_attention(cj, data.c_str(), split.c_str(), checkpoints.c_str(), ids.data(),
                                       ids.size(), out.c_str()));
  }
  return 0;
}
