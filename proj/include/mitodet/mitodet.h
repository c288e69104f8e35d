#ifndef MITODET_H
#define MITODET_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MFD_API __declspec(dllexport)
#else
#define MFD_API __attribute__((visibility("default")))
#endif

typedef enum mfd_status {
  MFD_OK = 0,
  MFD_ERR_INVALID_ARGUMENT = 1,
  MFD_ERR_IO = 2,
  MFD_ERR_PARSE = 3,
  MFD_ERR_NOT_FOUND = 4,
  MFD_ERR_PREREQUISITE = 5,
  MFD_ERR_VERSION = 6,
  MFD_ERR_NUMERIC = 7,
  MFD_ERR_INTERNAL = 8
} mfd_status;

typedef struct mfd_model mfd_model;
typedef struct mfd_detections mfd_detections;

typedef struct mfd_detection {
  double x1, y1, x2, y2;
  double score;
  int class_id;
} mfd_detection;

/* Message of the last failed call on this thread ("" if none). */
MFD_API const char* mfd_last_error(void);
/* Short machine-readable name, e.g. "prerequisite". */
MFD_API const char* mfd_status_category(mfd_status status);
MFD_API const char* mfd_version(void);

/* Every workflow takes a JSON object of config overrides (NULL or "" for the
   desk preset). `log_progress` != 0 prints per-epoch lines to stderr. */
MFD_API mfd_status mfd_resolve_config(const char* config_json, char** resolved_json);
MFD_API void mfd_string_free(char* s);

MFD_API mfd_status mfd_gen_synth(const char* config_json, const char* out_dir);
MFD_API mfd_status mfd_train_detector(const char* config_json, const char* data_dir,
                                      const char* checkpoint_dir, int log_progress);
MFD_API mfd_status mfd_train_classifier(const char* config_json, const char* data_dir,
                                        const char* checkpoint_dir, int log_progress);
MFD_API mfd_status mfd_train_fusion(const char* config_json, const char* data_dir,
                                    const char* checkpoint_dir, int log_progress);
/* Writes metrics.csv and metrics.json under out_dir. */
MFD_API mfd_status mfd_evaluate(const char* config_json, const char* data_dir, const char* split,
                                const char* checkpoint_dir, const char* out_dir, int baseline,
                                int oracle);
MFD_API mfd_status mfd_export_attention(const char* config_json, const char* data_dir,
                                        const char* split, const char* checkpoint_dir,
                                        const int* ids, size_t id_count, const char* out_dir);

MFD_API mfd_status mfd_model_load(const char* checkpoint_dir, mfd_model** out);
MFD_API void mfd_model_free(mfd_model* model);
/* composite != 0: detector + classifier + fusion; else the bare detector. */
MFD_API mfd_status mfd_model_infer_png(const mfd_model* model, const char* png_path, int composite,
                                       mfd_detections** out);
MFD_API size_t mfd_detections_count(const mfd_detections* dets);
MFD_API mfd_status mfd_detections_get(const mfd_detections* dets, size_t index, mfd_detection* out);
MFD_API void mfd_detections_free(mfd_detections* dets);

/* Runs infer on one PNG and writes the detections as JSON to out_path. */
MFD_API mfd_status mfd_infer(const char* config_json, const char* checkpoint_dir,
                             const char* png_path, const char* out_path, int baseline);

#ifdef __cplusplus
}
#endif

#endif
