#ifndef MODSPEC_H
#define MODSPEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum ModspecStatus {
  MODSPEC_STATUS_OK = 0,
  MODSPEC_STATUS_NULL_POINTER = 1,
  MODSPEC_STATUS_INVALID_ARGUMENT = 2,
  MODSPEC_STATUS_SHAPE_MISMATCH = 3,
  MODSPEC_STATUS_NOT_HERMITIAN = 4,
  MODSPEC_STATUS_NOT_POSITIVE = 5,
  MODSPEC_STATUS_PARSE = 6,
  MODSPEC_STATUS_IO = 7,
  MODSPEC_STATUS_HYPOTHESIS = 8,
  MODSPEC_STATUS_OUT_OF_RANGE = 9,
  MODSPEC_STATUS_BUFFER_TOO_SMALL = 10,
  MODSPEC_STATUS_PANIC = 11,
} ModspecStatus;

// Result of [`modspec_diagonalize`].
typedef struct ModspecDecomposition ModspecDecomposition;

// Self-adjoint operator on a truncated Hilbert module.
typedef struct ModspecOperator ModspecOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success. The
// pointer stays valid until the next call into this library on the thread.
const char *modspec_last_error(void);

// Library version as a static NUL-terminated string.
const char *modspec_version(void);

// Builds an operator from `points` fibers. Fiber `i` has matrix size
// `len * dims[i]`; its entries are read row-major from `re` and `im`, with
// the fibers stored one after another. Weights must sum to one.
//
// # Safety
// `weights` and `dims` must point to `points` elements; `re` and `im` to
// `Σ (len·dims[i])²` elements each; `out` must be writable.
enum ModspecStatus modspec_operator_new(size_t points,
                                        const double *weights,
                                        const size_t *dims,
                                        size_t len,
                                        const double *re,
                                        const double *im,
                                        struct ModspecOperator **out);

// Loads an operator field file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum ModspecStatus modspec_operator_from_file(const char *path, struct ModspecOperator **out);

// # Safety
// `op` must come from this library and not have been freed; null is ignored.
void modspec_operator_free(struct ModspecOperator *op);

// Number of grid points and truncation length.
//
// # Safety
// `op` must be a live handle; `points` and `len` must be writable.
enum ModspecStatus modspec_operator_shape(const struct ModspecOperator *op,
                                          size_t *points,
                                          size_t *len);

// Runs the diagonalizer. `max_terms = 0` means the full rank budget.
//
// # Safety
// `op` must be a live handle; `out` must be writable.
enum ModspecStatus modspec_diagonalize(const struct ModspecOperator *op,
                                       double target,
                                       size_t max_terms,
                                       struct ModspecDecomposition **out);

// # Safety
// `dec` must come from this library and not have been freed; null is ignored.
void modspec_decomposition_free(struct ModspecDecomposition *dec);

// Counts of positive and negative terms.
//
// # Safety
// `dec` must be a live handle; `positive` and `negative` must be writable.
enum ModspecStatus modspec_decomposition_terms(const struct ModspecDecomposition *dec,
                                               size_t *positive,
                                               size_t *negative);

// Writes 1 to `passed` when every certificate passed, else 0.
//
// # Safety
// `dec` must be a live handle; `passed` must be writable.
enum ModspecStatus modspec_decomposition_certified(const struct ModspecDecomposition *dec,
                                                   int32_t *passed);

// Ascending spectrum of the eigenvalue field of a term at one grid point.
// Positive terms are indexed `0..positive`, negative terms follow. Writes
// the count to `written`; fails with `BufferTooSmall` (count still written)
// when `capacity` is insufficient.
//
// # Safety
// `dec` must be a live handle; `values` must hold `capacity` doubles;
// `written` must be writable.
enum ModspecStatus modspec_decomposition_eigenvalues(const struct ModspecDecomposition *dec,
                                                     size_t term,
                                                     size_t point,
                                                     double *values,
                                                     size_t capacity,
                                                     size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODSPEC_H */
