#ifndef HYDROBALANCE_H
#define HYDROBALANCE_H

/* Generated by cbindgen from the hydrobalance-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum HbStatus {
  HB_STATUS_OK = 0,
  HB_STATUS_NULL_POINTER = 1,
  HB_STATUS_INVALID_ARGUMENT = 2,
  HB_STATUS_PARSE_ERROR = 3,
  HB_STATUS_NUMERICAL_ERROR = 4,
  HB_STATUS_PANIC = 5,
} HbStatus;

// Initial laws constructible through the C surface.
typedef enum HbInitKind {
  // Point mass at `p0`.
  HB_INIT_KIND_DIRAC = 0,
  // Uniform on `[p0, p1)`.
  HB_INIT_KIND_UNIFORM = 1,
} HbInitKind;

// Model handle: validated parameters plus their derived constants.
typedef struct HbModel HbModel;

// Finished simulation run handle.
typedef struct HbSim HbSim;

// Tail-equation solver handle.
typedef struct HbSolver HbSolver;

// Closed-form stationary profile handle.
typedef struct HbStationary HbStationary;

// Derived limit constants, by value.
typedef struct HbDerived {
  double lambda_n;
  double lambda0_n;
  double mu_n;
  double rho;
  double b1;
  double c1;
  double b0;
  double sigma_ser;
  double sigma2;
  double a;
} HbDerived;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version as a static C string.
const char *hb_version(void);

// Message of the last error on this thread (empty when none). The pointer
// stays valid until the next failing call on the same thread.
const char *hb_last_error(void);

// Parse a TOML configuration document (the same schema the CLI reads) and
// build a model handle from its `[model]` table.
//
// # Safety
// `text` must be a valid NUL-terminated string and `out` a valid pointer.
enum HbStatus hb_model_from_toml(const char *text, struct HbModel **out);

// # Safety
// `model` must come from [`hb_model_from_toml`] and not have been freed.
void hb_model_free(struct HbModel *model);

// # Safety
// `model` and `out` must be valid pointers.
enum HbStatus hb_model_derived(const struct HbModel *model, struct HbDerived *out);

// Build the closed-form stationary profile (requires a stable model,
// `rho < 0`).
//
// # Safety
// `model` and `out` must be valid pointers.
enum HbStatus hb_stationary_new(const struct HbModel *model, struct HbStationary **out);

// # Safety
// `profile` must come from [`hb_stationary_new`] and not have been freed.
void hb_stationary_free(struct HbStationary *profile);

// `alpha = b / c1` of the profile; NaN on a null handle.
//
// # Safety
// `profile` must be a valid handle or null.
double hb_stationary_alpha(const struct HbStationary *profile);

// Evaluate the stationary tail (`out[i] = v_stat(xs[i])`).
//
// # Safety
// `xs` and `out` must point to `len` readable/writable doubles.
enum HbStatus hb_stationary_tail(const struct HbStationary *profile,
                                 const double *xs,
                                 uintptr_t len,
                                 double *out);

// Evaluate the stationary density (`out[i] = u_stat(xs[i])`).
//
// # Safety
// `xs` and `out` must point to `len` readable/writable doubles.
enum HbStatus hb_stationary_density(const struct HbStationary *profile,
                                    const double *xs,
                                    uintptr_t len,
                                    double *out);

// Create a tail-equation solver on `[0, x_max]` with `cells` cells,
// initialized from the given law.
//
// # Safety
// `model` and `out` must be valid pointers.
enum HbStatus hb_solver_new(const struct HbModel *model,
                            enum HbInitKind kind,
                            double p0,
                            double p1,
                            double x_max,
                            uintptr_t cells,
                            struct HbSolver **out);

// # Safety
// `solver` must come from [`hb_solver_new`] and not have been freed.
void hb_solver_free(struct HbSolver *solver);

// Advance the solver to `t_end`.
//
// # Safety
// `solver` must be a valid handle.
enum HbStatus hb_solver_evolve(struct HbSolver *solver, double t_end);

// Current solver time; NaN on a null handle.
//
// # Safety
// `solver` must be a valid handle or null.
double hb_solver_time(const struct HbSolver *solver);

// Evaluate the current tail by linear interpolation.
//
// # Safety
// `xs` and `out` must point to `len` readable/writable doubles.
enum HbStatus hb_solver_tail(const struct HbSolver *solver,
                             const double *xs,
                             uintptr_t len,
                             double *out);

// Macroscopic mean and spread of the current profile.
//
// # Safety
// All pointers must be valid.
enum HbStatus hb_solver_macro(const struct HbSolver *solver, double *m_mac, double *sigma_mac);

// Simulate the n-server system with snapshots at `times` (sorted,
// nonnegative) under the given seed.
//
// # Safety
// `model`, `times` (length `n_times`) and `out` must be valid pointers.
enum HbStatus hb_sim_run(const struct HbModel *model,
                         enum HbInitKind kind,
                         double p0,
                         double p1,
                         const double *times,
                         uintptr_t n_times,
                         uint64_t seed,
                         struct HbSim **out);

// # Safety
// `sim` must come from [`hb_sim_run`] and not have been freed.
void hb_sim_free(struct HbSim *sim);

// Number of recorded snapshots; 0 on a null handle.
//
// # Safety
// `sim` must be a valid handle or null.
uintptr_t hb_sim_snapshot_count(const struct HbSim *sim);

// Time, sample size, empirical mean and variance of snapshot `index`.
//
// # Safety
// All pointers must be valid.
enum HbStatus hb_sim_snapshot_stats(const struct HbSim *sim,
                                    uintptr_t index,
                                    double *t,
                                    uintptr_t *size,
                                    double *mean,
                                    double *variance);

// Copy the sorted rescaled samples of snapshot `index` into `buf`
// (capacity `cap`); writes the copied count to `written`.
//
// # Safety
// `buf` must point to `cap` writable doubles; the other pointers must be
// valid.
enum HbStatus hb_sim_snapshot_samples(const struct HbSim *sim,
                                      uintptr_t index,
                                      double *buf,
                                      uintptr_t cap,
                                      uintptr_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYDROBALANCE_H */
