#ifndef DANA_H
#define DANA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DanaStatus {
  DANA_STATUS_OK = 0,
  DANA_STATUS_NULL_POINTER = 1,
  DANA_STATUS_DIMENSION = 2,
  DANA_STATUS_UNSUPPORTED_DIMENSIONS = 3,
  DANA_STATUS_TOO_SHORT = 4,
  DANA_STATUS_INVALID_SELECTION = 5,
  DANA_STATUS_CONFIG = 6,
  DANA_STATUS_IO = 7,
  DANA_STATUS_FORMAT = 8,
  DANA_STATUS_BUFFER_TOO_SMALL = 9,
  DANA_STATUS_INTERNAL = 10,
} DanaStatus;

/**
 * A trained classifier loaded from a checkpoint directory.
 */
typedef struct DanaModel DanaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next dana call on the same thread.
 */
const char *dana_last_error(void);

/**
 * Adaptive max pooling of `maps` row-major `samples x streams` maps onto a
 * `width x height` grid. `out` receives `maps * width * height` values.
 *
 * # Safety
 * `input_maps` must point to `maps * samples * streams` readable values and
 * `out` to `out_len` writable values.
 */
enum DanaStatus dana_dap_forward(const double *input_maps,
                                 size_t maps,
                                 size_t samples,
                                 size_t streams,
                                 size_t width,
                                 size_t height,
                                 size_t axes_per_sensor,
                                 double *out,
                                 size_t out_len);

/**
 * Linear resampling of a row-major `samples x streams` window from
 * `rate_hz` to `target_rate_hz`. The new sample count is written to
 * `out_samples` even when `out` is too small.
 *
 * # Safety
 * `data` must point to `samples * streams` readable values, `out` to
 * `out_len` writable values and `out_samples` to one writable `usize`.
 */
enum DanaStatus dana_resample(const double *data,
                              size_t samples,
                              size_t streams,
                              double rate_hz,
                              double target_rate_hz,
                              double *out,
                              size_t out_len,
                              size_t *out_samples);

/**
 * Loads a checkpoint directory written by `dana train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path and `model` a writable pointer.
 */
enum DanaStatus dana_model_load(const char *dir, struct DanaModel **model);

/**
 * Number of classes the model scores.
 *
 * # Safety
 * `model` must be null or a live handle from [`dana_model_load`].
 */
size_t dana_model_classes(const struct DanaModel *model);

/**
 * Class scores for one window of `samples` rows holding the axes of the
 * listed sensors side by side. `scores` receives one logit per class and
 * `label` the arg-max class.
 *
 * # Safety
 * `model` must be a live handle; `data` must hold
 * `samples * sensor_count * axes_per_sensor` values; `sensors` must hold
 * `sensor_count` ids; `scores` must hold `scores_len` values; `label` must be
 * writable.
 */
enum DanaStatus dana_model_predict(const struct DanaModel *model,
                                   const double *data,
                                   size_t samples,
                                   double rate_hz,
                                   const size_t *sensors,
                                   size_t sensor_count,
                                   double *scores,
                                   size_t scores_len,
                                   size_t *label);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dana_model_free(struct DanaModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DANA_H */
