#ifndef NSDDE_H
#define NSDDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Scheme selector accepted by the simulation entry points.
#define NSDDE_SCHEME_TAMED 0

#define NSDDE_SCHEME_CLASSIC 1

// Result code of every fallible call.
typedef enum NsddeStatus {
  NSDDE_STATUS_OK = 0,
  NSDDE_STATUS_INVALID_ARGUMENT = 1,
  NSDDE_STATUS_GRID_INCOMPATIBLE = 2,
  NSDDE_STATUS_STEP_TOO_LARGE = 3,
  NSDDE_STATUS_PATH_DIVERGED = 4,
  NSDDE_STATUS_HYPOTHESIS_VIOLATED = 5,
  NSDDE_STATUS_CANNOT_FIT = 6,
  NSDDE_STATUS_IO = 7,
  NSDDE_STATUS_CONFIG = 8,
  NSDDE_STATUS_NULL_POINTER = 9,
  NSDDE_STATUS_BUFFER_TOO_SMALL = 10,
  NSDDE_STATUS_PANIC = 11,
} NsddeStatus;

// Opaque time grid.
typedef struct NsddeGrid NsddeGrid;

// Opaque built-in system.
typedef struct NsddeSystem NsddeSystem;

// Inputs of the decay-base function.
typedef struct NsddeCertificateInputs {
  double kappa;
  double tau;
  double lambda2;
  double lambda3;
  double k_tilde;
  double h;
} NsddeCertificateInputs;

// Decay-base certificate.
typedef struct NsddeCertificate {
  double f_at_one;
  double c_bar;
  double c;
  double ms_rate;
  double as_rate;
} NsddeCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failed call on this thread, or null. The
// pointer stays valid until the next failing call on the same thread.
const char *nsdde_last_error(void);

// Linear scalar system `d[x - k0 y] = (-a x + bt y) dt + s y dw`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NsddeStatus nsdde_system_linear(double kappa0,
                                     double a,
                                     double btilde,
                                     double s,
                                     struct NsddeSystem **out);

// Scalar system with drift `-x^3` and no noise.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NsddeStatus nsdde_system_cubic(struct NsddeSystem **out);

// Scalar system driven by unit additive noise only.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NsddeStatus nsdde_system_pure_noise(struct NsddeSystem **out);

// State dimension of a system; 0 for a null handle.
//
// # Safety
// `system` must be null or a live handle.
uintptr_t nsdde_system_state_dim(const struct NsddeSystem *system);

// Releases a system handle. Null is ignored.
//
// # Safety
// `system` must be null or a handle not yet freed.
void nsdde_system_free(struct NsddeSystem *system);

// Grid with `h = tau / lag` on `[0, t_end]`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NsddeStatus nsdde_grid_new(double tau, double t_end, uintptr_t lag, struct NsddeGrid **out);

// Number of steps `M`; 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
uintptr_t nsdde_grid_steps(const struct NsddeGrid *grid);

// Step size `h`; NaN for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
double nsdde_grid_step_size(const struct NsddeGrid *grid);

// Releases a grid handle. Null is ignored.
//
// # Safety
// `grid` must be null or a handle not yet freed.
void nsdde_grid_free(struct NsddeGrid *grid);

// Tamed drift `b / (1 + h^alpha |b|)` of a `len`-vector into `out`.
//
// # Safety
// `b` and `out` must point to `len` readable and writable doubles.
enum NsddeStatus nsdde_tame_drift(const double *b,
                                  uintptr_t len,
                                  double h,
                                  double alpha,
                                  double *out);

// Simulates one path from the constant segment `xi = segment_value`.
//
// States `Y_0, Y_1, ...` are written row by row into `states` (capacity
// `capacity` doubles, `(M + 1) * state_dim` needed). `written` receives the
// number of doubles written, or the required count on
// `NSDDE_STATUS_BUFFER_TOO_SMALL`. `diverged_at` receives the diverging
// step or -1. A diverged path returns `NSDDE_STATUS_PATH_DIVERGED` with the
// finite prefix written.
//
// # Safety
// Handles must be live; `states` must hold `capacity` doubles; `written`
// and `diverged_at` must be null or writable.
enum NsddeStatus nsdde_simulate_path(const struct NsddeSystem *system,
                                     const struct NsddeGrid *grid,
                                     uint32_t scheme_kind,
                                     double alpha,
                                     double segment_value,
                                     uint64_t seed,
                                     uint64_t stream,
                                     double *states,
                                     uintptr_t capacity,
                                     uintptr_t *written,
                                     int64_t *diverged_at);

// Ensemble estimate of `E|Y_k|^2` and its standard error over `paths`
// paths from the constant segment. Buffers need `M + 1` doubles each;
// `written` receives the trajectory length, which is shorter if a path
// diverged, and `divergences` the number of diverged paths.
//
// # Safety
// Handles must be live; `moments` and `std_errors` must hold `capacity`
// doubles; `written` and `divergences` must be null or writable.
enum NsddeStatus nsdde_estimate_second_moment(const struct NsddeSystem *system,
                                              const struct NsddeGrid *grid,
                                              uint32_t scheme_kind,
                                              double alpha,
                                              double segment_value,
                                              uint64_t seed,
                                              uintptr_t paths,
                                              double *moments,
                                              double *std_errors,
                                              uintptr_t capacity,
                                              uintptr_t *written,
                                              uintptr_t *divergences);

// Decay-base function `f(x)`.
double nsdde_eval_f(double x, struct NsddeCertificateInputs inputs);

// Root `C_bar > 1` of `f`, the chosen base `C` and the certified rates.
//
// # Safety
// `inputs` must be readable and `out` writable.
enum NsddeStatus nsdde_find_decay_base(const struct NsddeCertificateInputs *inputs,
                                       struct NsddeCertificate *out);

// Runs an experiment described by configuration text, as `nsdde run` does.
// `out_dir` overrides `out.dir` when non-null; `workers == 0` uses every
// core. `exit_code` receives the command-line exit status of the run.
//
// # Safety
// `config` must be a NUL-terminated string; `out_dir` null or
// NUL-terminated; `exit_code` null or writable.
enum NsddeStatus nsdde_run_config(const char *config,
                                  const char *out_dir,
                                  uintptr_t workers,
                                  bool strict,
                                  int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSDDE_H */
