#ifndef MCCSEG_H
#define MCCSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MccsegRegime {
  MCCSEG_REGIME_SUPERVISED = 0,
  MCCSEG_REGIME_COMBINED = 1,
  MCCSEG_REGIME_MCC_SEMI = 2,
  MCCSEG_REGIME_MCC_TRANSFER = 3,
} MccsegRegime;

typedef enum MccsegStatus {
  MCCSEG_STATUS_OK = 0,
  MCCSEG_STATUS_NULL_POINTER = 1,
  MCCSEG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Inputs or configuration were rejected before any work started.
   */
  MCCSEG_STATUS_VALIDATION = 3,
  /**
   * I/O, numeric or other failure while working.
   */
  MCCSEG_STATUS_RUNTIME = 4,
  MCCSEG_STATUS_PANIC = 5,
} MccsegStatus;

/**
 * Dataset manifest with every pair validated.
 */
typedef struct MccsegDataset MccsegDataset;

/**
 * Restored network ready for sliding-window inference.
 */
typedef struct MccsegPredictor MccsegPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error recorded on this thread, or null. Free with [`mccseg_string_free`].
 */
char *mccseg_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void mccseg_string_free(char *s);

/**
 * Static, nul-terminated library version.
 */
const char *mccseg_version(void);

/**
 * Static, nul-terminated regime name such as `mcc_semi`.
 */
const char *mccseg_regime_name(enum MccsegRegime regime);

/**
 * Loads a checkpoint archive into a new predictor handle.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MccsegStatus mccseg_predictor_load(const char *path, struct MccsegPredictor **out);

/**
 * Number of classes the predictor emits, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live predictor.
 */
size_t mccseg_predictor_num_classes(const struct MccsegPredictor *handle);

/**
 * Labels an interleaved RGB image (`height * width * 3` bytes, row-major).
 *
 * Writes `height * width` class indices into `out_labels`.
 *
 * # Safety
 * Buffers must hold the stated number of bytes; `handle` must be live.
 */
enum MccsegStatus mccseg_predictor_predict(struct MccsegPredictor *handle,
                                           const uint8_t *rgb,
                                           size_t height,
                                           size_t width,
                                           size_t window,
                                           size_t stride,
                                           uint8_t *out_labels);

/**
 * # Safety
 * `handle` must be null or a predictor not yet freed.
 */
void mccseg_predictor_free(struct MccsegPredictor *handle);

/**
 * Loads and validates a dataset manifest.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MccsegStatus mccseg_dataset_load(const char *path, struct MccsegDataset **out);

/**
 * Declares a power-of-two downscale on `handle` in place (zoom drops one level per factor of two).
 *
 * # Safety
 * `handle` must be a live dataset.
 */
enum MccsegStatus mccseg_dataset_downscale(struct MccsegDataset *handle, uint32_t factor);

/**
 * Zoom level after any declared downscale, or `i32::MIN` for a null handle.
 *
 * # Safety
 * `handle` must be null or a live dataset.
 */
int32_t mccseg_dataset_zoom_level(const struct MccsegDataset *handle);

/**
 * # Safety
 * `handle` must be null or a dataset not yet freed.
 */
void mccseg_dataset_free(struct MccsegDataset *handle);

/**
 * Recommends a regime; `source` may be null.
 *
 * When `out_reasons` is non-null it receives newline-separated reasons to free
 * with [`mccseg_string_free`].
 *
 * # Safety
 * Handles must be live or null (source only); outputs must be writable.
 */
enum MccsegStatus mccseg_recommend(const struct MccsegDataset *target,
                                   const struct MccsegDataset *source,
                                   enum MccsegRegime *out_regime,
                                   char **out_reasons);

/**
 * MCC loss over `num_pixels` rows of `num_classes` logits (row-major).
 *
 * Uses every row (no subsampling). `out_grad` may be null; otherwise it
 * receives `num_pixels * num_classes` partial derivatives.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
enum MccsegStatus mccseg_mcc_loss(const double *logits,
                                  size_t num_pixels,
                                  size_t num_classes,
                                  double temperature,
                                  double *out_loss,
                                  double *out_grad);

/**
 * Per-class IoU of two `height * width` label maps; absent classes are written as NaN.
 *
 * Also writes the image mean IoU over defined non-unknown classes to
 * `out_mean` when non-null (NaN when none is defined).
 *
 * # Safety
 * `pred`/`gt` must hold `height * width` bytes, `out_iou` `num_classes` values.
 */
enum MccsegStatus mccseg_iou(const uint8_t *pred,
                             const uint8_t *gt,
                             size_t height,
                             size_t width,
                             size_t num_classes,
                             uint8_t unknown_index,
                             double *out_iou,
                             double *out_mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCCSEG_H */
