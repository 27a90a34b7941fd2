#ifndef ICE_FFI_H
#define ICE_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IceStatus {
  ICE_STATUS_OK = 0,
  // The solver stopped at its iteration cap; the result is still valid.
  ICE_STATUS_NOT_CONVERGED = 1,
  ICE_STATUS_NULL_POINTER = 2,
  ICE_STATUS_INVALID_ARGUMENT = 3,
  ICE_STATUS_DIMENSION = 4,
  ICE_STATUS_SINGULAR = 5,
  ICE_STATUS_DEGENERATE = 6,
  ICE_STATUS_NON_FINITE = 7,
  ICE_STATUS_BREAKDOWN = 8,
  ICE_STATUS_PANIC = 9,
} IceStatus;

typedef enum IceAlgorithm {
  ICE_ALGORITHM_MPDR_INI = 0,
  ICE_ALGORITHM_OGICE_W = 1,
  ICE_ALGORITHM_OGICE_A = 2,
  ICE_ALGORITHM_OGICE_S = 3,
  ICE_ALGORITHM_OGIVE_W = 4,
  ICE_ALGORITHM_OGIVE_A = 5,
  ICE_ALGORITHM_OGIVE_S = 6,
  ICE_ALGORITHM_PILOTED_OGIVE_S = 7,
  ICE_ALGORITHM_NG = 8,
  ICE_ALGORITHM_SCNG = 9,
  ICE_ALGORITHM_FICA = 10,
} IceAlgorithm;

// Observed mixtures, `k` blocks of `d x n` samples, plus an optional pilot.
typedef struct IceData IceData;

typedef struct IceResult IceResult;

// Settings of the OGICE/OGIVE gradient solvers.
typedef struct IceOptions {
  double step_mu;
  double tol;
  size_t max_iter;
  // Criterion refresh period of the switched solvers.
  size_t q;
  // Switching threshold.
  double tau;
} IceOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *ice_last_error(void);

// Library version as a static nul-terminated string.
const char *ice_version(void);

// Default gradient-solver settings.
struct IceOptions ice_options_default(void);

// Copy `k` mixtures into a new data object. `blocks[m]` points at
// `2 * d * n` doubles.
//
// # Safety
// `blocks` must hold `k` valid pointers and `out` must be writable.
enum IceStatus ice_data_new(const double *const *blocks,
                            size_t k,
                            size_t d,
                            size_t n,
                            struct IceData **out);

// Attach a pilot of `n` complex samples for the piloted solver.
//
// # Safety
// `data` must come from [`ice_data_new`]; `pilot` must hold `2 * n` doubles.
enum IceStatus ice_data_set_pilot(struct IceData *data, const double *pilot);

// # Safety
// `data` must be null or come from [`ice_data_new`], and not be used afterwards.
void ice_data_free(struct IceData *data);

// Extract one source per mixture. `a_init` holds `k` initial mixing
// vectors, `2 * d` doubles each. `options` may be null for the defaults.
//
// Returns `ICE_STATUS_OK` or `ICE_STATUS_NOT_CONVERGED` with `*out` set, or
// an error code with `*out` untouched.
//
// # Safety
// Pointers must be valid for the sizes above; `out` must be writable.
enum IceStatus ice_extract(const struct IceData *data,
                           enum IceAlgorithm algorithm,
                           const double *a_init,
                           const struct IceOptions *options,
                           struct IceResult **out);

// Number of mixtures in a result.
//
// # Safety
// `result` must be null or a live handle.
size_t ice_result_mixtures(const struct IceResult *result);

// # Safety
// `result` must be null or a live handle.
size_t ice_result_iterations(const struct IceResult *result);

// # Safety
// `result` must be null or a live handle.
bool ice_result_converged(const struct IceResult *result);

// Write the mixing vector of mixture `m` (`2 * d` doubles).
//
// # Safety
// `result` must be a live handle and `out` must have room for `2 * d` doubles.
enum IceStatus ice_result_a(const struct IceResult *result, size_t m, double *out);

// Write the separating vector of mixture `m` (`2 * d` doubles).
//
// # Safety
// `result` must be a live handle and `out` must have room for `2 * d` doubles.
enum IceStatus ice_result_w(const struct IceResult *result, size_t m, double *out);

// Write the extracted signal of mixture `m` (`2 * n` doubles).
//
// # Safety
// `result` must be a live handle and `out` must have room for `2 * n` doubles.
enum IceStatus ice_result_signal(const struct IceResult *result, size_t m, double *out);

// # Safety
// `result` must be null or come from [`ice_extract`], and not be used afterwards.
void ice_result_free(struct IceResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICE_FFI_H */
