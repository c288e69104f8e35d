#include "mitodet/mitodet.h"

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <new>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "workflows.hpp"

struct mfd_model {
  mitodet::CompositeModel model;
};

struct mfd_detections {
  std::vector<mitodet::Detection> items;
};

namespace {

thread_local std::string last_error;

mfd_status status_of(mitodet::ErrorCode code) { return static_cast<mfd_status>(static_cast<int>(code)); }

template <class F>
mfd_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return MFD_OK;
  } catch (const mitodet::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return MFD_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return MFD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MFD_ERR_INTERNAL;
  }
}

std::string required(const char* s, const char* name) {
  if (!s || !*s) mitodet::fail(mitodet::ErrorCode::InvalidArgument, std::string(name) + " is required");
  return s;
}

mitodet::WorkflowContext context(const char* config_json, int log_progress = 0) {
  nlohmann::json overrides = nlohmann::json::object();
  if (config_json && *config_json) {
    try {
      overrides = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error& e) {
      mitodet::fail(mitodet::ErrorCode::Parse, std::string("config: ") + e.what());
    }
  }
  mitodet::WorkflowContext ctx{mitodet::resolve_config(overrides)};
  if (log_progress) ctx.log = &std::cerr;
  return ctx;
}

}  // namespace

extern "C" {

const char* mfd_last_error(void) { return last_error.c_str(); }

const char* mfd_status_category(mfd_status status) {
  if (status == MFD_OK) return "ok";
  if (status < MFD_ERR_INVALID_ARGUMENT || status > MFD_ERR_INTERNAL) return "internal";
  return mitodet::error_category(static_cast<mitodet::ErrorCode>(status));
}

const char* mfd_version(void) { return "1.0.0"; }

mfd_status mfd_resolve_config(const char* config_json, char** resolved_json) {
  return guarded([&] {
    if (!resolved_json) mitodet::fail(mitodet::ErrorCode::InvalidArgument, "resolved_json is null");
    const std::string text = mitodet::to_json(context(config_json).config).dump(2);
    char* buf = static_cast<char*>(std::malloc(text.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *resolved_json = buf;
  });
}

void mfd_string_free(char* s) { std::free(s); }

mfd_status mfd_gen_synth(const char* config_json, const char* out_dir) {
  return guarded([&] { mitodet::gen_synth(context(config_json), required(out_dir, "out_dir")); });
}

mfd_status mfd_train_detector(const char* config_json, const char* data_dir, const char* checkpoint_dir,
                              int log_progress) {
  return guarded([&] {
    mitodet::train_detector_stage(context(config_json, log_progress), required(data_dir, "data_dir"),
                                  required(checkpoint_dir, "checkpoint_dir"));
  });
}

mfd_status mfd_train_classifier(const char* config_json, const char* data_dir, const char* checkpoint_dir,
                                int log_progress) {
  return guarded([&] {
    mitodet::train_classifier_stage(context(config_json, log_progress), required(data_dir, "data_dir"),
                                    required(checkpoint_dir, "checkpoint_dir"));
  });
}

mfd_status mfd_train_fusion(const char* config_json, const char* data_dir, const char* checkpoint_dir,
                            int log_progress) {
  return guarded([&] {
    mitodet::train_fusion_stage(context(config_json, log_progress), required(data_dir, "data_dir"),
                                required(checkpoint_dir, "checkpoint_dir"));
  });
}

mfd_status mfd_evaluate(const char* config_json, const char* data_dir, const char* split,
                        const char* checkpoint_dir, const char* out_dir, int baseline, int oracle) {
  return guarded([&] {
    mitodet::EvaluateOptions opt;
    if (split && *split) opt.split = split;
    opt.baseline = baseline != 0;
    opt.oracle = oracle != 0;
    const std::string ckpt = oracle ? std::string(checkpoint_dir ? checkpoint_dir : "")
                                    : required(checkpoint_dir, "checkpoint_dir");
    mitodet::evaluate_stage(context(config_json), required(data_dir, "data_dir"), ckpt,
                            required(out_dir, "out_dir"), opt);
  });
}

mfd_status mfd_export_attention(const char* config_json, const char* data_dir, const char* split,
                                const char* checkpoint_dir, const int* ids, size_t id_count,
                                const char* out_dir) {
  return guarded([&] {
    if (id_count > 0 && !ids) mitodet::fail(mitodet::ErrorCode::InvalidArgument, "ids is null");
    std::vector<int> list(ids, ids + id_count);
    mitodet::export_attention(context(config_json), required(data_dir, "data_dir"),
                              split && *split ? split : "test", required(checkpoint_dir, "checkpoint_dir"),
                              list, required(out_dir, "out_dir"));
  });
}

mfd_status mfd_model_load(const char* checkpoint_dir, mfd_model** out) {
  return guarded([&] {
    if (!out) mitodet::fail(mitodet::ErrorCode::InvalidArgument, "out is null");
    *out = nullptr;
    *out = new mfd_model{mitodet::load_model(required(checkpoint_dir, "checkpoint_dir"))};
  });
}

void mfd_model_free(mfd_model* model) { delete model; }

mfd_status mfd_model_infer_png(const mfd_model* model, const char* png_path, int composite,
                               mfd_detections** out) {
  return guarded([&] {
    if (!model || !out) mitodet::fail(mitodet::ErrorCode::InvalidArgument, "model and out are required");
    *out = nullptr;
    const mitodet::Image image = mitodet::read_png(required(png_path, "png_path"));
    auto dets = composite ? mitodet::composite_infer(image, model->model)
                          : mitodet::baseline_infer(image, model->model);
    *out = new mfd_detections{std::move(dets)};
  });
}

size_t mfd_detections_count(const mfd_detections* dets) { return dets ? dets->items.size() : 0; }

mfd_status mfd_detections_get(const mfd_detections* dets, size_t index, mfd_detection* out) {
  return guarded([&] {
    if (!dets || !out) mitodet::fail(mitodet::ErrorCode::InvalidArgument, "dets and out are required");
    if (index >= dets->items.size()) {
      mitodet::fail(mitodet::ErrorCode::InvalidArgument, "detection index out of range");
    }
    const auto& d = dets->items[index];
    *out = {d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score, d.class_id};
  });
}

void mfd_detections_free(mfd_detections* dets) { delete dets; }

mfd_status mfd_infer(const char* config_json, const char* checkpoint_dir, const char* png_path,
                     const char* out_path, int baseline) {
  return guarded([&] {
    mitodet::infer_image(context(config_json), required(checkpoint_dir, "checkpoint_dir"),
                         required(png_path, "png_path"), out_path ? out_path : "", baseline != 0);
  });
}

}  // extern "C"
