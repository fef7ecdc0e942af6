// SPDX-License-Identifier: Apache-2.0
/* C interface to the multi-task robustness lab.
 *
 * Every function returns an mtr_status; on failure mtr_last_error() holds a
 * message for the calling thread until its next call into the library.
 * Handles are opaque and owned by the caller; free them with the matching
 * *_free function. Strings returned through char** are freed with
 * mtr_string_free. */
#ifndef MTRLAB_MTRLAB_H
#define MTRLAB_MTRLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(MTRLAB_BUILDING_LIBRARY)
#define MTR_API __attribute__((visibility("default")))
#else
#define MTR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtr_status {
  MTR_OK = 0,
  MTR_INVALID_ARGUMENT = 1,
  MTR_CONFIG_ERROR = 2,
  MTR_NUMERIC_ERROR = 3,
  MTR_THRESHOLD_VIOLATION = 4,
  MTR_IO_ERROR = 5,
  MTR_FORMAT_ERROR = 6,
  MTR_INTERNAL_ERROR = 7
} mtr_status;

typedef struct mtr_dataset mtr_dataset;
typedef struct mtr_model mtr_model;

MTR_API const char* mtr_version(void);
MTR_API const char* mtr_last_error(void);
MTR_API const char* mtr_status_name(mtr_status status);
/* Process exit code of the CLI for a status: 0, 2 (config), 3 (numeric),
 * 4 (threshold) or 1. */
MTR_API int mtr_exit_code(mtr_status status);
MTR_API void mtr_string_free(char* s);
/* Raises glibc's mmap and trim thresholds so the per-step tensor churn of
 * training reuses heap pages. Process-wide; call once at startup. */
MTR_API void mtr_tune_allocator(void);

/* scene_json: scene parameters object ("{}" for defaults). */
MTR_API mtr_status mtr_dataset_generate(const char* scene_json, size_t examples, uint64_t seed, const char* split,
                                        mtr_dataset** out);
MTR_API mtr_status mtr_dataset_read(const char* path, mtr_dataset** out);
MTR_API mtr_status mtr_dataset_write(const mtr_dataset* dataset, const char* path);
MTR_API mtr_status mtr_dataset_size(const mtr_dataset* dataset, size_t* out);
MTR_API void mtr_dataset_free(mtr_dataset* dataset);

/* model_json: same schema as a checkpoint's config block. */
MTR_API mtr_status mtr_model_create(const char* model_json, uint64_t seed, mtr_model** out);
MTR_API mtr_status mtr_model_load(const char* path, mtr_model** out);
MTR_API mtr_status mtr_model_save(const mtr_model* model, const char* path);
MTR_API mtr_status mtr_model_parameter_count(const mtr_model* model, size_t* out);
/* weights_json: {"task": weight, ...}; train_json: training settings
 * ("{}" for defaults). */
MTR_API mtr_status mtr_model_train(mtr_model* model, const mtr_dataset* dataset, const char* weights_json,
                                   const char* train_json);
/* attack_json: attack settings; objective_json: {"task": name} or
 * {"weights": {...}}. Writes a JSON array of per-task
 * {task, metric, clean, attacked}. Pass attack_json = NULL for clean metrics
 * only. */
MTR_API mtr_status mtr_model_evaluate(const mtr_model* model, const mtr_dataset* dataset, const char* objective_json,
                                      const char* attack_json, char** out_json);
MTR_API void mtr_model_free(mtr_model* model);

MTR_API mtr_status mtr_pgd_step_schedule(double epsilon, size_t* out_steps);
/* c: row-major m x m task-gradient covariance. */
MTR_API mtr_status mtr_joint_norm_prediction(const double* c, size_t m, double* out);
MTR_API mtr_status mtr_uncorrelated_prediction(size_t m, double* out);

/* Runs a harness command; out_dir NULL means ".", seed and workers are used
 * only when the matching has_* flag is nonzero. Progress lines go to
 * log(line, user) when log is non-NULL. */
typedef void (*mtr_log_fn)(const char* line, void* user);
MTR_API mtr_status mtr_run_command(const char* command, const char* config_json, const char* out_dir, int has_seed,
                                   uint64_t seed, int has_workers, size_t workers, mtr_log_fn log, void* user);
/* Newline-separated list of command names. */
MTR_API const char* mtr_command_names(void);

#ifdef __cplusplus
}
#endif

#endif /* MTRLAB_MTRLAB_H */
