#ifndef SHELLFLOW_H
#define SHELLFLOW_H

/* Generated by cbindgen from crates/shellflow-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit contract.
 */
typedef enum {
  SF_OK = 0,
  SF_NULL_ARGUMENT = 1,
  SF_INVALID_CONFIG = 2,
  SF_BLOW_UP = 3,
  SF_INVARIANT_VIOLATION = 4,
  SF_INTERNAL = 5,
} SfStatus;

/**
 * Component selector for trajectory access.
 */
typedef enum {
  SF_COMPONENT_U = 0,
  SF_COMPONENT_W = 1,
  SF_COMPONENT_Q = 2,
} SfComponent;

/**
 * Opaque model handle: a parsed configuration.
 */
typedef struct SfModel SfModel;

/**
 * Opaque trajectory handle.
 */
typedef struct SfTrajectory SfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread; the pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Parse a TOML configuration into a model handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string, `out` a valid pointer. The handle
 * must be released with `sf_model_free`.
 */
SfStatus sf_model_parse_toml(const char *text, SfModel **out);

/**
 * Release a model handle; a null pointer is a no-op.
 *
 * # Safety
 * `model` must come from `sf_model_parse_toml` and not be freed twice.
 */
void sf_model_free(SfModel *model);

/**
 * Shell count of the model.
 *
 * # Safety
 * `model` must be a live handle.
 */
uint32_t sf_model_shells(const SfModel *model);

/**
 * Integrate one trajectory per the model's solver section.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer; the trajectory
 * must be released with `sf_trajectory_free`.
 */
SfStatus sf_simulate(const SfModel *model, uint64_t seed, SfTrajectory **out);

/**
 * Release a trajectory handle; a null pointer is a no-op.
 *
 * # Safety
 * `traj` must come from `sf_simulate` and not be freed twice.
 */
void sf_trajectory_free(SfTrajectory *traj);

/**
 * Number of stored samples.
 *
 * # Safety
 * `traj` must be a live handle.
 */
uintptr_t sf_trajectory_samples(const SfTrajectory *traj);

/**
 * Shell count of the stored states.
 *
 * # Safety
 * `traj` must be a live handle.
 */
uint32_t sf_trajectory_shells(const SfTrajectory *traj);

/**
 * Time of sample `index`.
 *
 * # Safety
 * `traj` must be a live handle and `out` a valid pointer.
 */
SfStatus sf_trajectory_time(const SfTrajectory *traj, uintptr_t index, double *out);

/**
 * Copy one component of sample `index` into `re_im`, interleaved as
 * re_1, im_1, ..., re_N, im_N (2N doubles).
 *
 * # Safety
 * `traj` must be a live handle; `re_im` must point to at least 2N doubles.
 */
SfStatus sf_trajectory_state(const SfTrajectory *traj,
                             uintptr_t index,
                             SfComponent component,
                             double *re_im);

/**
 * S_p(k_n) of the chosen component into `out` (N doubles).
 *
 * # Safety
 * `traj` must be a live handle; `out` must point to at least N doubles.
 */
SfStatus sf_structure_function(const SfTrajectory *traj,
                               double p,
                               SfComponent component,
                               double *out);

/**
 * Least-squares scaling exponent of `s_values` against `wavenumbers` over
 * the 1-based shell range [n_lo, n_hi].
 *
 * # Safety
 * `s_values` and `wavenumbers` must point to `len` doubles each; `zeta`
 * and `residual` must be valid pointers.
 */
SfStatus sf_fit_zeta(const double *s_values,
                     const double *wavenumbers,
                     uintptr_t len,
                     uintptr_t n_lo,
                     uintptr_t n_hi,
                     double *zeta,
                     double *residual);

/**
 * k_n = k0 2^n for n >= 1.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
SfStatus sf_wavenumber(uint32_t shell, double k0, double *out);

/**
 * Run the invariant battery of the validate subcommand.
 *
 * # Safety
 * `model` must be a live handle.
 */
SfStatus sf_validate(const SfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHELLFLOW_H */
