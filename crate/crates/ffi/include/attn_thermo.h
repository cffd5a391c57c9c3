#ifndef ATTN_THERMO_H
#define ATTN_THERMO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AtStatus {
  AT_STATUS_OK = 0,
  AT_STATUS_NULL_POINTER = 1,
  AT_STATUS_INVALID_ARGUMENT = 2,
  AT_STATUS_SHAPE_MISMATCH = 3,
  AT_STATUS_NON_FINITE = 4,
  AT_STATUS_NOT_CONVERGED = 5,
  AT_STATUS_NOT_PRIME = 6,
  AT_STATUS_IO = 7,
  AT_STATUS_BUFFER_TOO_SMALL = 8,
  AT_STATUS_PANIC = 9,
  AT_STATUS_FAILED = 10,
} AtStatus;

// Windowed series stored in a Langevin run.
typedef enum AtLangevinSeries {
  AT_LANGEVIN_SERIES_TIME = 0,
  AT_LANGEVIN_SERIES_ALPHA = 1,
  AT_LANGEVIN_SERIES_MEAN_ABS_PHI = 2,
  AT_LANGEVIN_SERIES_ENERGY_MEAN = 3,
  AT_LANGEVIN_SERIES_ENERGY_VAR = 4,
  AT_LANGEVIN_SERIES_SPECIFIC_HEAT = 5,
} AtLangevinSeries;

typedef enum AtGrokSeries {
  AT_GROK_SERIES_EPOCH = 0,
  AT_GROK_SERIES_TRAIN_LOSS = 1,
  AT_GROK_SERIES_VAL_LOSS = 2,
  AT_GROK_SERIES_TRAIN_ACC = 3,
  AT_GROK_SERIES_VAL_ACC = 4,
  AT_GROK_SERIES_CV_WEIGHTED = 5,
  AT_GROK_SERIES_CV_UNWEIGHTED = 6,
  AT_GROK_SERIES_WEIGHT_NORM_SQ = 7,
  AT_GROK_SERIES_EFFECTIVE_TEMPERATURE = 8,
  AT_GROK_SERIES_ATTENTION_ENTROPY = 9,
} AtGrokSeries;

// Opaque result of a training run.
typedef struct AtGrokRun AtGrokRun;

// Opaque result of a Langevin run.
typedef struct AtLangevinRun AtLangevinRun;

// Thermodynamic observables of the softmax equilibrium.
typedef struct AtObservables {
  double temperature;
  double log_z;
  double z;
  double internal_energy;
  double entropy;
  double free_energy;
  double specific_heat;
  double pressure;
} AtObservables;

// Parameters of `V(Φ) = α|Φ|² + β|Φ|² ln(|Φ|²/v²)`.
typedef struct AtPotential {
  double alpha;
  double beta;
  double v;
} AtPotential;

// Everything that determines a Langevin ensemble run.
typedef struct AtLangevinParams {
  double beta;
  double v;
  double alpha_start;
  double alpha_end;
  double anneal_time;
  double dt;
  double diffusion;
  size_t n_particles;
  size_t n_steps;
  uint64_t seed;
  size_t field_dim;
  size_t window;
  double initial_phi;
} AtLangevinParams;

// Peak of the windowed specific heat relative to its pre-transition median.
typedef struct AtCrossover {
  size_t transition_window;
  size_t peak_window;
  double peak_time;
  double peak_cv;
  double pre_transition_median_cv;
  double peak_ratio;
} AtCrossover;

// Overrides applied to the default training configuration. Zero fields keep
// the default.
typedef struct AtGrokParams {
  uint64_t p;
  uint64_t seed;
  size_t max_epochs;
  size_t d_model;
  double learning_rate;
  double weight_decay;
  // Nonzero selects single precision.
  int32_t single_precision;
} AtGrokParams;

// Per-run outcome; epochs are −1 when the event never happened.
typedef struct AtGrokSummary {
  int64_t cv_peak_epoch;
  double cv_peak_value;
  int64_t memorization_epoch;
  int64_t generalization_epoch;
  int32_t peak_precedes_generalization;
  size_t epochs_run;
  double final_train_acc;
  double final_val_acc;
  // Nonzero if training diverged.
  int32_t failed;
} AtGrokSummary;

typedef struct AtPowerLawFit {
  double exponent_a;
  double intercept;
  double r_squared;
} AtPowerLawFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *at_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len - 1` bytes) and returns the full message length in bytes
// excluding the terminator. Pass a null `buf` to query the length.
//
// # Safety
// `buf` must be null or valid for `len` writes.
size_t at_last_error_message(char *buf, size_t len);

// Writes the softmax equilibrium of `n` energies at temperature `t` into
// `out_rho` (length `n`).
//
// # Safety
// `energies` and `out_rho` must be valid for `n` elements.
enum AtStatus at_softmax_equilibrium(const double *energies, size_t n, double t, double *out_rho);

// Observables of the equilibrium state; `context_volume = 0` means `n`.
//
// # Safety
// `energies` must be valid for `n` elements and `out` for one write.
enum AtStatus at_observables(const double *energies,
                             size_t n,
                             double t,
                             size_t context_volume,
                             struct AtObservables *out);

// Relaxes the uniform distribution onto the equilibrium by entropic mirror
// descent. Writes the final distribution and the number of steps taken.
// Returns `NotConverged` (with the iterate still written) if the residual
// stays above `tol` after `max_steps`.
//
// # Safety
// `energies` and `out_rho` must be valid for `n` elements, `out_steps` null
// or valid for one write.
enum AtStatus at_relax_to_equilibrium(const double *energies,
                                      size_t n,
                                      double t,
                                      double step,
                                      size_t max_steps,
                                      double tol,
                                      double *out_rho,
                                      size_t *out_steps);

// Potential at a real (`dim = 1`) or complex (`dim = 2`) field value.
//
// # Safety
// `phi` must be valid for `dim` reads and `out` for one write.
enum AtStatus at_cw_potential(const double *phi,
                              size_t dim,
                              struct AtPotential params,
                              double *out);

// Radius of the potential minimum, `v·exp(−(α+β)/2β)`.
//
// # Safety
// `out` must be valid for one write.
enum AtStatus at_trough_radius(struct AtPotential params, double *out);

// Change in potential when the pair `(q1, q2)` is rotated by the rotary
// angle for `position`.
//
// # Safety
// `out` must be valid for one write.
enum AtStatus at_rope_energy_shift(double q1,
                                   double q2,
                                   double theta_base,
                                   uint64_t position,
                                   struct AtPotential params,
                                   double *out);

// Fills `out` with the library defaults.
//
// # Safety
// `out` must be valid for one write.
enum AtStatus at_langevin_default_params(struct AtLangevinParams *out);

// Runs the ensemble and stores the trajectory in a new handle.
//
// # Safety
// `params` must be valid for one read and `out` for one write.
enum AtStatus at_langevin_run(const struct AtLangevinParams *params, struct AtLangevinRun **out);

// Number of windows in the run; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t at_langevin_len(const struct AtLangevinRun *run);

// Copies one windowed series (an [`AtLangevinSeries`] value) into `out`
// (length `len`).
//
// # Safety
// `run` must be a live handle and `out` valid for `len` writes.
enum AtStatus at_langevin_series(const struct AtLangevinRun *run,
                                 int32_t which,
                                 double *out,
                                 size_t len);

// # Safety
// `run` must be a live handle and `out` valid for one write.
enum AtStatus at_langevin_crossover(const struct AtLangevinRun *run, struct AtCrossover *out);

// Releases a Langevin handle; null is ignored.
//
// # Safety
// `run` must be null or a handle not yet freed.
void at_langevin_free(struct AtLangevinRun *run);

// Trains one model on modular addition. This can take minutes to hours.
//
// # Safety
// `params` must be valid for one read and `out` for one write.
enum AtStatus at_grok_run(const struct AtGrokParams *params, struct AtGrokRun **out);

// Number of logged epochs; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t at_grok_len(const struct AtGrokRun *run);

// Copies one logged series (an [`AtGrokSeries`] value) into `out`.
//
// # Safety
// `run` must be a live handle and `out` valid for `len` writes.
enum AtStatus at_grok_series(const struct AtGrokRun *run, int32_t which, double *out, size_t len);

// # Safety
// `run` must be a live handle and `out` valid for one write.
enum AtStatus at_grok_summary(const struct AtGrokRun *run, struct AtGrokSummary *out);

// Releases a training handle; null is ignored.
//
// # Safety
// `run` must be null or a handle not yet freed.
void at_grok_free(struct AtGrokRun *run);

// Fits `cv ≈ exp(intercept)·p^a` by least squares in log–log space. With a
// non-null `cv_std` every point is weighted by the inverse variance of
// `ln cv` (`n_seeds` per point, default 1 when null).
//
// # Safety
// `moduli` and `cv_mean` must be valid for `n` reads; `cv_std` and
// `n_seeds` null or valid for `n` reads; `out` valid for one write.
enum AtStatus at_fit_power_law(const uint64_t *moduli,
                               const double *cv_mean,
                               const double *cv_std,
                               const size_t *n_seeds,
                               size_t n,
                               struct AtPowerLawFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTN_THERMO_H */
