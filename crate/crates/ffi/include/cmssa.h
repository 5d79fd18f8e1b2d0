#ifndef CMSSA_H
#define CMSSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmssaStatus {
  CMSSA_STATUS_OK = 0,
  CMSSA_STATUS_NULL_POINTER = 1,
  CMSSA_STATUS_INVALID_ARGUMENT = 2,
  CMSSA_STATUS_IO = 3,
  CMSSA_STATUS_PARSE = 4,
  CMSSA_STATUS_CHECKPOINT = 5,
  CMSSA_STATUS_SHAPE = 6,
  CMSSA_STATUS_NUMERIC = 7,
  CMSSA_STATUS_INTERNAL = 8,
} CmssaStatus;

/**
 * Opaque model handle.
 */
typedef struct CmssaModel CmssaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model checkpoint. On success `*out` owns a handle that must be
 * released with [`cmssa_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CmssaStatus cmssa_model_load(const char *path, struct CmssaModel **out);

/**
 * Releases a handle from [`cmssa_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle not freed before.
 */
void cmssa_model_free(struct CmssaModel *model);

/**
 * Side length of the square crops the model scores.
 *
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
enum CmssaStatus cmssa_model_input_side(const struct CmssaModel *model, uint32_t *out);

/**
 * Scores an interleaved RGB8 image (`width * height * 3` bytes, rows packed)
 * by mean crop score. `stride` 0 selects non-overlapping crops.
 *
 * # Safety
 * `model` must be a live handle, `pixels` must hold `width * height * 3`
 * bytes and `out` must be a valid pointer.
 */
enum CmssaStatus cmssa_model_score_rgb8(const struct CmssaModel *model,
                                        const uint8_t *pixels,
                                        uint32_t width,
                                        uint32_t height,
                                        uint32_t stride,
                                        double *out);

/**
 * Loads an image file and scores it like [`cmssa_model_score_rgb8`].
 *
 * # Safety
 * `model` must be a live handle, `path` a NUL-terminated string and `out` a
 * valid pointer.
 */
enum CmssaStatus cmssa_model_score_file(const struct CmssaModel *model,
                                        const char *path,
                                        uint32_t stride,
                                        double *out);

/**
 * Spearman rank correlation with average ranks for ties. Constant input
 * gives 0 with `*out_degenerate` set; `out_degenerate` may be null.
 *
 * # Safety
 * `pred` and `gt` must each hold `n` values; `out_value` must be valid.
 */
enum CmssaStatus cmssa_srcc(const double *pred,
                            const double *gt,
                            size_t n,
                            double *out_value,
                            bool *out_degenerate);

/**
 * Pearson correlation; degenerate handling as in [`cmssa_srcc`].
 *
 * # Safety
 * As [`cmssa_srcc`].
 */
enum CmssaStatus cmssa_plcc(const double *pred,
                            const double *gt,
                            size_t n,
                            double *out_value,
                            bool *out_degenerate);

/**
 * Root mean squared error.
 *
 * # Safety
 * `pred` and `gt` must each hold `n` values; `out` must be valid.
 */
enum CmssaStatus cmssa_rmse(const double *pred, const double *gt, size_t n, double *out);

/**
 * Square root of the mean absolute error.
 *
 * # Safety
 * As [`cmssa_rmse`].
 */
enum CmssaStatus cmssa_rmae(const double *pred, const double *gt, size_t n, double *out);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next cmssa call on the same thread.
 */
const char *cmssa_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cmssa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMSSA_H */
