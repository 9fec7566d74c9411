#ifndef NIAL_H
#define NIAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  NIAL_STATUS_OK = 0,
  NIAL_STATUS_DIMENSION = 1,
  NIAL_STATUS_LABEL = 2,
  NIAL_STATUS_CONTRACT = 3,
  NIAL_STATUS_BUILD = 4,
  NIAL_STATUS_CHECKPOINT_FORMAT = 5,
  NIAL_STATUS_CHECKPOINT_VERSION = 6,
  NIAL_STATUS_PARSE = 7,
  NIAL_STATUS_EMPTY_DATASET = 8,
  NIAL_STATUS_SPLIT = 9,
  NIAL_STATUS_DIVERGENCE = 10,
  NIAL_STATUS_CONFIG = 11,
  NIAL_STATUS_IO = 12,
  /**
   * A required pointer argument was NULL.
   */
  NIAL_STATUS_NULL_POINTER = 100,
  /**
   * A string argument was not valid UTF-8.
   */
  NIAL_STATUS_INVALID_UTF8 = 101,
  /**
   * An output buffer was too small for the result.
   */
  NIAL_STATUS_BUFFER_TOO_SMALL = 102,
  /**
   * The library panicked; this is a bug.
   */
  NIAL_STATUS_PANIC = 199,
} NialStatus;

/**
 * Opaque labelled set of fixed-length beats.
 */
typedef struct NialDataset NialDataset;

/**
 * Opaque trained or loaded classifier.
 */
typedef struct NialModel NialModel;

/**
 * Metrics returned by [`nial_evaluate`].
 */
typedef struct {
  size_t n_samples;
  /**
   * Mean per-sample loss.
   */
  double loss;
  double accuracy;
  /**
   * F1 of class 1 for binary models, macro F1 otherwise.
   */
  double f1;
} NialEvalReport;

/**
 * Summary of a [`nial_train_from_config`] run.
 */
typedef struct {
  size_t epochs_run;
  /**
   * 1-based epoch of the best validation loss, 0 if no epoch ran.
   */
  size_t best_epoch;
  double best_val_loss;
  double final_lr;
  bool stopped_early;
} NialTrainSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nial_version(void);

/**
 * Message of the last failing call on this thread, or NULL if none has
 * failed. The pointer stays valid until the next failing call on the same
 * thread. The message starts with the error category, e.g. `"config: ..."`.
 */
const char *nial_last_error_message(void);

/**
 * Short stable name of a status code (`"ok"`, `"config"`, ...), or
 * `"unknown"` for values outside [`NialStatus`]. Never NULL.
 */
const char *nial_status_name(int32_t status);

/**
 * Loads a NIAL checkpoint from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
NialStatus nial_model_load(const char *path, NialModel **out);

/**
 * Writes `model` as a NIAL checkpoint to `path`.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
NialStatus nial_model_save(const NialModel *model, const char *path);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void nial_model_free(NialModel *model);

/**
 * Samples per beat the model expects, or 0 if `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t nial_model_input_len(const NialModel *model);

/**
 * Number of label classes (2 for a single-logit binary head), or 0 if
 * `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t nial_model_num_classes(const NialModel *model);

/**
 * Number of logits per sample: 1 for binary heads, else the class count.
 * Returns 0 if `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t nial_model_num_outputs(const NialModel *model);

/**
 * Eval-mode logits for `n_rows` row-major beats of `row_len` samples.
 * Writes `n_rows * nial_model_num_outputs(model)` values to `out`, whose
 * capacity is `out_len`. No preprocessing is applied.
 *
 * # Safety
 * `signals` must point to `n_rows * row_len` doubles and `out` to
 * `out_len` writable doubles.
 */
NialStatus nial_model_logits(const NialModel *model,
                             const double *signals,
                             size_t n_rows,
                             size_t row_len,
                             double *out,
                             size_t out_len);

/**
 * Predicted class index of each of `n_rows` beats, written to
 * `out_labels[0..n_rows]`. No preprocessing is applied.
 *
 * # Safety
 * `signals` must point to `n_rows * row_len` doubles and `out_labels` to
 * `n_rows` writable `size_t`s.
 */
NialStatus nial_model_predict(const NialModel *model,
                              const double *signals,
                              size_t n_rows,
                              size_t row_len,
                              size_t *out_labels);

/**
 * Loads a headerless CSV (signal columns then an integer label). With
 * `expected_len` > 0 every row must have that many signal columns.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
NialStatus nial_dataset_load_csv(const char *path, size_t expected_len, NialDataset **out);

/**
 * Builds a dataset from caller memory: `n_rows` row-major beats of
 * `row_len` samples and one label per row, with `n_classes` classes.
 *
 * # Safety
 * `signals` must hold `n_rows * row_len` doubles, `labels` `n_rows`
 * values, and `out` must be writable.
 */
NialStatus nial_dataset_from_arrays(const double *signals,
                                    const size_t *labels,
                                    size_t n_rows,
                                    size_t row_len,
                                    size_t n_classes,
                                    NialDataset **out);

/**
 * Deterministic synthetic beats (the same generator as `nial gen-synth`).
 *
 * # Safety
 * `out` must be writable.
 */
NialStatus nial_dataset_synth(size_t n_classes,
                              size_t per_class,
                              size_t len,
                              double noise,
                              uint64_t seed,
                              NialDataset **out);

/**
 * Applies per-row preprocessing in place: min-max to [0, 1] first, then
 * z-scoring, each only if its flag is set.
 *
 * # Safety
 * `dataset` must be a live handle.
 */
NialStatus nial_dataset_preprocess(NialDataset *dataset, bool minmax, bool standardize);

/**
 * Number of rows, or 0 if `dataset` is NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t nial_dataset_num_samples(const NialDataset *dataset);

/**
 * Samples per row, or 0 if `dataset` is NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t nial_dataset_signal_len(const NialDataset *dataset);

/**
 * Number of classes, or 0 if `dataset` is NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t nial_dataset_num_classes(const NialDataset *dataset);

/**
 * Releases a dataset handle. NULL is ignored.
 *
 * # Safety
 * `dataset` must be NULL or a handle from this library not yet freed.
 */
void nial_dataset_free(NialDataset *dataset);

/**
 * Eval-mode metrics of `model` on `dataset` (same as `nial evaluate`).
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
NialStatus nial_evaluate(const NialModel *model, const NialDataset *dataset, NialEvalReport *out);

/**
 * Runs `nial train` on the config file at `config_path` with `n_overrides`
 * `key=value` strings applied on top. On success `*out_best` receives the
 * lowest-validation-loss model and, if `summary` is non-NULL, it is filled
 * in. Outputs configured in the file (epoch log, checkpoints) are written
 * as by the CLI.
 *
 * # Safety
 * `config_path` and each of the `n_overrides` entries of `overrides` must be
 * NUL-terminated; `overrides` may be NULL when `n_overrides` is 0.
 */
NialStatus nial_train_from_config(const char *config_path,
                                  const char *const *overrides,
                                  size_t n_overrides,
                                  NialModel **out_best,
                                  NialTrainSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIAL_H */
