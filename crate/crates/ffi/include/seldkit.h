#ifndef SELDKIT_H
#define SELDKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Config, data and numerical failures share their
 * values with the command-line exit codes.
 */
typedef enum SeldkitStatus {
  SELDKIT_STATUS_OK = 0,
  SELDKIT_STATUS_NULL_ARGUMENT = 1,
  SELDKIT_STATUS_CONFIG = 2,
  SELDKIT_STATUS_DATA = 3,
  SELDKIT_STATUS_NUMERICAL = 4,
  SELDKIT_STATUS_PANIC = 5,
} SeldkitStatus;

/**
 * Active `(class, direction)` events per 100 ms frame.
 */
typedef struct SeldkitEvents SeldkitEvents;

/**
 * A loaded checkpoint with its feature extractor.
 */
typedef struct SeldkitModel SeldkitModel;

/**
 * Aggregate SELD scores; `le_cd` is in degrees.
 */
typedef struct SeldkitScores {
  double er20;
  double f20;
  double le_cd;
  double lr_cd;
  double e_seld;
} SeldkitScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *seldkit_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *seldkit_last_error(void);

/**
 * Aggregate error from ER, F (fraction), LE (degrees) and LR (fraction).
 *
 * # Safety
 * `out` must point to writable memory for one `double`.
 */
enum SeldkitStatus seldkit_e_seld(double er, double f, double le_deg, double lr, double *out);

/**
 * New empty event list of `n_frames` frames.
 */
struct SeldkitEvents *seldkit_events_new(size_t n_frames);

/**
 * # Safety
 * `events` must come from this library and not be used afterwards. NULL is ignored.
 */
void seldkit_events_free(struct SeldkitEvents *events);

/**
 * Adds an event of class `class_idx` from direction `(x, y, z)` to a frame.
 *
 * # Safety
 * `events` must be a live handle.
 */
enum SeldkitStatus seldkit_events_add(struct SeldkitEvents *events,
                                      size_t frame,
                                      size_t class_idx,
                                      double x,
                                      double y,
                                      double z);

/**
 * Number of frames, 0 for NULL.
 *
 * # Safety
 * `events` must be a live handle or NULL.
 */
size_t seldkit_events_n_frames(const struct SeldkitEvents *events);

/**
 * Number of events in `frame`, 0 when out of range or NULL.
 *
 * # Safety
 * `events` must be a live handle or NULL.
 */
size_t seldkit_events_count(const struct SeldkitEvents *events, size_t frame);

/**
 * Reads event `i` of `frame` into `class_out` and the 3-vector `doa_out`.
 *
 * # Safety
 * `events` must be a live handle; `class_out` one writable `size_t`;
 * `doa_out` three writable doubles.
 */
enum SeldkitStatus seldkit_events_get(const struct SeldkitEvents *events,
                                      size_t frame,
                                      size_t i,
                                      size_t *class_out,
                                      double *doa_out);

/**
 * Scores predictions against references with one-second segments.
 *
 * # Safety
 * `pred` and `reference` must be live handles; `out` writable.
 */
enum SeldkitStatus seldkit_match_and_score(const struct SeldkitEvents *pred,
                                           const struct SeldkitEvents *reference,
                                           size_t n_classes,
                                           struct SeldkitScores *out);

/**
 * Loads a checkpoint written by the `seldkit` command line.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` writable.
 */
enum SeldkitStatus seldkit_model_load(const char *path, struct SeldkitModel **out);

/**
 * # Safety
 * `model` must come from [`seldkit_model_load`] and not be used afterwards. NULL is ignored.
 */
void seldkit_model_free(struct SeldkitModel *model);

/**
 * Number of sound classes, 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t seldkit_model_n_classes(const struct SeldkitModel *model);

/**
 * Expected input sample rate in Hz, 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
uint32_t seldkit_model_sample_rate(const struct SeldkitModel *model);

/**
 * Detects and localizes events in one FOA clip. `audio` holds four planar
 * channels (W, Y, Z, X) of `n_samples` each. Batch normalization uses the
 * stored running statistics. The new event list is written to `out`.
 *
 * # Safety
 * `model` must be a live handle; `audio` must hold `4 * n_samples` floats; `out` writable.
 */
enum SeldkitStatus seldkit_model_predict(const struct SeldkitModel *model,
                                         const float *audio,
                                         size_t n_samples,
                                         double threshold,
                                         struct SeldkitEvents **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELDKIT_H */
