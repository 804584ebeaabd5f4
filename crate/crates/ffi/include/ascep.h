#ifndef ASCEP_H
#define ASCEP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum AscepStatus {
  ASCEP_STATUS_OK = 0,
  // A required pointer argument was null.
  ASCEP_STATUS_NULL_POINTER = 1,
  // Argument outside its domain or with inconsistent dimensions.
  ASCEP_STATUS_INVALID_ARGUMENT = 2,
  // Malformed configuration text or data.
  ASCEP_STATUS_INVALID_DATA = 3,
  // The estimator failed numerically.
  ASCEP_STATUS_NUMERICAL = 4,
  // The requested quantity was not computed.
  ASCEP_STATUS_UNAVAILABLE = 5,
  // A Rust panic was caught at the boundary.
  ASCEP_STATUS_INTERNAL = 6,
} AscepStatus;

typedef enum AscepMethod {
  ASCEP_METHOD_AEP = 0,
  ASCEP_METHOD_APL_EXACT = 1,
  ASCEP_METHOD_APL_TAYLOR = 2,
  ASCEP_METHOD_PCGC = 3,
  ASCEP_METHOD_EP_PLAIN = 4,
} AscepMethod;

// Opaque study: covariates, genotypes and outcomes.
typedef struct AscepDataset AscepDataset;

// Opaque fit result.
typedef struct AscepFit AscepFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread. Valid until the next failing
// call on the same thread; never null.
const char *ascep_last_error(void);

// Library version as a static NUL-terminated string.
const char *ascep_version(void);

// Builds a dataset from row-major `x` (`n × d`), `z` (`n × m`, standardized)
// and `y` (`n` entries of 0 or 1). `x` may be null when `d` is 0.
//
// # Safety
// The buffers must hold the stated number of elements.
enum AscepStatus ascep_dataset_new(const double *x,
                                   size_t n,
                                   size_t d,
                                   const double *z,
                                   size_t m,
                                   const uint8_t *y,
                                   struct AscepDataset **out);

// Simulates a case-control study. `config_json` is a JSON simulation config
// (omitted fields take defaults) or null for all defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string.
enum AscepStatus ascep_dataset_simulate(const char *config_json, struct AscepDataset **out);

// # Safety
// `ds` must be null or a handle from this library, freed at most once.
void ascep_dataset_free(struct AscepDataset *ds);

// Units, covariates, markers and cases of a dataset. Null outputs are skipped.
//
// # Safety
// `ds` must be null or a live handle.
enum AscepStatus ascep_dataset_shape(const struct AscepDataset *ds,
                                     size_t *n,
                                     size_t *d,
                                     size_t *m,
                                     size_t *cases);

// Fits one study at prevalence `k`. A nonzero `jackknife` also computes the
// delete-one standard error.
//
// # Safety
// `ds` must be a live handle and `out` writable.
enum AscepStatus ascep_fit(const struct AscepDataset *ds,
                           enum AscepMethod method,
                           double k,
                           int jackknife,
                           struct AscepFit **out);

// # Safety
// `fit` must be null or a handle from this library, freed at most once.
void ascep_fit_free(struct AscepFit *fit);

// # Safety
// `fit` must be a live handle and `out` writable.
enum AscepStatus ascep_fit_theta(const struct AscepFit *fit, double *out);

// Jackknife standard error; `Unavailable` unless requested at fit time.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum AscepStatus ascep_fit_se(const struct AscepFit *fit, double *out);

// Objective at the estimate (NaN for the moment estimator).
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum AscepStatus ascep_fit_objective(const struct AscepFit *fit, double *out);

// 1 if every inner solver converged and θ̂ is interior, 0 otherwise, −1 for null.
//
// # Safety
// `fit` must be null or a live handle.
int ascep_fit_ok(const struct AscepFit *fit);

// Copies up to `cap` liability-scale fixed effects into `buf` and stores the
// total count in `len`. Pass `cap = 0` to query the length.
//
// # Safety
// `buf` must hold `cap` doubles; `len` must be writable.
enum AscepStatus ascep_fit_beta(const struct AscepFit *fit, double *buf, size_t cap, size_t *len);

// The full fit as JSON. Release with [`ascep_string_free`].
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum AscepStatus ascep_fit_to_json(const struct AscepFit *fit, char **out);

// # Safety
// `s` must be null or a string returned by this library, freed at most once.
void ascep_string_free(char *s);

// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `rho`.
//
// # Safety
// `out` must be writable.
enum AscepStatus ascep_bvn_cdf(double h, double k, double rho, double *out);

// Sampling weights `(s0, s1)` for population prevalence `k` and sample case
// fraction `p`.
//
// # Safety
// `s0` and `s1` must be writable.
enum AscepStatus ascep_sampling_weights(double k, double p, double *s0, double *s1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASCEP_H */
