#ifndef FHTW_H
#define FHTW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FhtwFilter {
  FHTW_FILTER_HAAR = 0,
  FHTW_FILTER_D4 = 1,
} FhtwFilter;

typedef enum FhtwLayout {
  FHTW_LAYOUT_LINE1D = 0,
  FHTW_LAYOUT_GRID2D = 1,
} FhtwLayout;

/**
 * Status codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum FhtwStatus {
  FHTW_STATUS_OK = 0,
  FHTW_STATUS_INVALID_INPUT = 2,
  FHTW_STATUS_DATA_ERROR = 3,
  FHTW_STATUS_NUMERICAL = 4,
  FHTW_STATUS_IO_ERROR = 5,
  FHTW_STATUS_NULL_POINTER = 6,
  FHTW_STATUS_PANIC = 7,
} FhtwStatus;

/**
 * Opaque fitted model.
 */
typedef struct FhtwModel FhtwModel;

/**
 * Opaque wavelet plan.
 */
typedef struct FhtwPlan FhtwPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *fhtw_last_error(void);

/**
 * Plan for a line of `d` sites (1D) or a grid of `d = m * m` sites (2D).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum FhtwStatus fhtw_plan_new(enum FhtwFilter filter,
                              enum FhtwLayout layout,
                              size_t d,
                              struct FhtwPlan **out);

/**
 * # Safety
 * `plan` must come from `fhtw_plan_new` and not be used afterwards.
 */
void fhtw_plan_free(struct FhtwPlan *plan);

/**
 * Number of sites of the plan, 0 for a null handle.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t fhtw_plan_dim(const struct FhtwPlan *plan);

/**
 * Wavelet coordinates of one lattice configuration of length `len`.
 *
 * # Safety
 * `plan` must be live; `input` and `output` must each hold `len` doubles.
 */
enum FhtwStatus fhtw_plan_forward(const struct FhtwPlan *plan,
                                  const double *input,
                                  double *output,
                                  size_t len);

/**
 * Lattice configuration from wavelet coordinates.
 *
 * # Safety
 * As for `fhtw_plan_forward`.
 */
enum FhtwStatus fhtw_plan_inverse(const struct FhtwPlan *plan,
                                  const double *input,
                                  double *output,
                                  size_t len);

/**
 * Draws `n` samples of the periodic 1D OU chain into `out` (`n x d`).
 *
 * # Safety
 * `out` must hold `n * d` doubles.
 */
enum FhtwStatus fhtw_sample_ou_1d(size_t d, double alpha, size_t n, uint64_t seed, double *out);

/**
 * Fits a model with rank `rank` and Legendre degree `q` to `n` lattice
 * samples of dimension `d`, after transforming them with `filter`.
 *
 * # Safety
 * `samples` must hold `n * d` doubles; `out` must be writable.
 */
enum FhtwStatus fhtw_model_fit(const double *samples,
                               size_t n,
                               size_t d,
                               enum FhtwFilter filter,
                               enum FhtwLayout layout,
                               size_t rank,
                               size_t q,
                               uint64_t seed,
                               struct FhtwModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FhtwStatus fhtw_model_load(const char *path, struct FhtwModel **out);

/**
 * # Safety
 * `model` must be live; `path` must be a NUL-terminated string.
 */
enum FhtwStatus fhtw_model_save(const struct FhtwModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void fhtw_model_free(struct FhtwModel *model);

/**
 * Number of variables, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t fhtw_model_dim(const struct FhtwModel *model);

/**
 * Normalised density at a point given in the model's (wavelet) coordinates.
 *
 * # Safety
 * `point` must hold `len` doubles; `out` must be writable.
 */
enum FhtwStatus fhtw_model_density(const struct FhtwModel *model,
                                   const double *point,
                                   size_t len,
                                   double *out);

/**
 * Row-major `d x d` correlation matrix in lattice coordinates when the
 * model records its transform, otherwise in model coordinates.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum FhtwStatus fhtw_model_correlation(const struct FhtwModel *model, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FHTW_H */
