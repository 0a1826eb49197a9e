/* C interface for the fhrformer library. */

#ifndef FHRFORMER_H
#define FHRFORMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum FhrformerStatus {
  Ok = 0,
  /**
   * Null pointer, zero length, or an otherwise unusable argument.
   */
  InvalidArgument = 1,
  /**
   * The input data violates a contract (length, range, format).
   */
  DataError = 2,
  /**
   * A numeric failure (non-finite values) inside the model.
   */
  NumericError = 3,
} FhrformerStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct FhrformerModel FhrformerModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message on this thread into `buf` (NUL
 * terminated, truncated to `cap` bytes). Returns the full message
 * length in bytes, excluding the terminator. `buf` may be null to
 * query the length.
 */
uintptr_t fhrformer_last_error(char *buf, uintptr_t cap);

/**
 * Load a checkpoint from a NUL-terminated path. Returns null on
 * failure (see `fhrformer_last_error`). Free with
 * `fhrformer_model_free`.
 *
 * # Safety
 * `path` must point to a valid NUL-terminated string.
 */
struct FhrformerModel *fhrformer_model_load(const char *path);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `fhrformer_model_load` and not have been
 * freed already.
 */
void fhrformer_model_free(struct FhrformerModel *model);

/**
 * Expected input length in samples for the loaded model.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t fhrformer_model_input_len(const struct FhrformerModel *model);

/**
 * Patch size of the loaded model; buffer lengths passed to the task
 * calls must be multiples of it.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t fhrformer_model_patch_size(const struct FhrformerModel *model);

/**
 * Fill unobserved samples of a recording in place. `values_bpm` and
 * `observed` (nonzero = observed) have `len` samples; the completed
 * signal is written to `out_bpm` (also `len` samples). Observed
 * samples are copied through unchanged.
 *
 * # Safety
 * All pointers must be valid for `len` elements; `out_bpm` must be
 * writable.
 */
enum FhrformerStatus fhrformer_inpaint(const struct FhrformerModel *model,
                                       const double *values_bpm,
                                       const uint8_t *observed,
                                       uintptr_t len,
                                       double *out_bpm);

/**
 * Recursive forecast: `history_bpm` holds `history_len` samples with
 * the most recent last; `horizon` predictions are written to
 * `out_bpm`. `context_len` and `step_len` must be multiples of the
 * model patch size and `history_len >= context_len`.
 *
 * # Safety
 * `history_bpm` must be valid for `history_len` elements and `out_bpm`
 * writable for `horizon` elements.
 */
enum FhrformerStatus fhrformer_forecast(const struct FhrformerModel *model,
                                        const double *history_bpm,
                                        uintptr_t history_len,
                                        uintptr_t context_len,
                                        uintptr_t step_len,
                                        uintptr_t horizon,
                                        double *out_bpm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FHRFORMER_H */
