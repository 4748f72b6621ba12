#ifndef WDRO_H
#define WDRO_H

/* Generated by cbindgen from wdro-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define WDRO_OK 0

// Invalid argument (null pointer, bad UTF-8, malformed option string).
#define WDRO_ERR_USAGE 1

// Data error (I/O, parse, dimension or task mismatch).
#define WDRO_ERR_DATA 2

// Numerical or domain error (invalid sigma, budget, order, ...).
#define WDRO_ERR_NUMERIC 3

// Panic caught at the boundary.
#define WDRO_ERR_INTERNAL 4

// Opaque anchor handle (hypothesis ball and multiplier interval).
typedef struct WdroAnchors WdroAnchors;

// Opaque coreset handle (sparse weights over sample indices).
typedef struct WdroCoreset WdroCoreset;

// Opaque dataset handle.
typedef struct WdroDataset WdroDataset;

// Opaque loss-model handle (loss family plus ground metric).
typedef struct WdroModel WdroModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message for this thread into `buf` (NUL-terminated,
// truncated to `cap` bytes). Returns the full message length in bytes,
// excluding the terminator.
//
// # Safety
// `buf` must point to `cap` writable bytes, or be null (then only the
// required length is returned).
size_t wdro_last_error(char *buf, size_t cap);

// Parse a LIBSVM file into a dataset. `regression` nonzero keeps raw
// labels; zero maps them to {-1, +1}.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int wdro_dataset_read_libsvm(const char *path, int regression, struct WdroDataset **out);

// Generate the two-cluster synthetic dataset.
//
// # Safety
// `out` must be a valid pointer.
int wdro_dataset_synth_blobs(size_t n,
                             size_t m,
                             double separation,
                             double label_noise,
                             uint64_t seed,
                             struct WdroDataset **out);

// Number of samples (0 for a null handle).
//
// # Safety
// `ds` must be null or a live handle from a `wdro_dataset_*` constructor.
size_t wdro_dataset_len(const struct WdroDataset *ds);

// Feature dimension (0 for a null handle).
//
// # Safety
// `ds` must be null or a live handle from a `wdro_dataset_*` constructor.
size_t wdro_dataset_dim(const struct WdroDataset *ds);

// # Safety
// `ds` must come from a `wdro_dataset_*` constructor and not be freed twice.
void wdro_dataset_free(struct WdroDataset *ds);

// Create a loss model. `loss` is one of `svm | logistic | huber:<delta> |
// hypercube-svm:<l>`; `norm` is `l1 | l2 | linf`.
//
// # Safety
// `loss` and `norm` must be NUL-terminated strings, `out` a valid pointer.
int wdro_model_new(const char *loss,
                   const char *norm,
                   double gamma,
                   uint32_t p,
                   struct WdroModel **out);

// # Safety
// `model` must come from [`wdro_model_new`] and not be freed twice.
void wdro_model_free(struct WdroModel *model);

// Compute anchors for the hypothesis ball `B(theta_anc, l_p)`. A null
// `theta_anc` means the zero vector; otherwise `theta_len` must equal the
// dataset dimension.
//
// # Safety
// Handles must be valid; `theta_anc`, when non-null, must point to
// `theta_len` readable doubles; `out` must be valid.
int wdro_anchors_compute(const struct WdroDataset *ds,
                         const struct WdroModel *model,
                         double sigma,
                         const double *theta_anc,
                         size_t theta_len,
                         double l_p,
                         struct WdroAnchors **out);

// Anchor multiplier `lambda_anc` (NaN for a null handle).
//
// # Safety
// `anchors` must be null or a live handle from [`wdro_anchors_compute`].
double wdro_anchors_lambda(const struct WdroAnchors *anchors);

// Data spread `rho = max_i d(xi_i, xi_0)` (NaN for a null handle).
//
// # Safety
// `anchors` must be null or a live handle from [`wdro_anchors_compute`].
double wdro_anchors_rho(const struct WdroAnchors *anchors);

// # Safety
// `anchors` must come from [`wdro_anchors_compute`] and not be freed twice.
void wdro_anchors_free(struct WdroAnchors *anchors);

// Build a dual coreset with `budget` support points by grid sampling.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
int wdro_coreset_build(const struct WdroDataset *ds,
                       const struct WdroModel *model,
                       const struct WdroAnchors *anchors,
                       double sigma,
                       size_t budget,
                       uint64_t seed,
                       struct WdroCoreset **out);

// Baseline: uniform sampling without replacement, weights `1/budget`.
//
// # Safety
// `ds` must be valid and `out` a valid pointer.
int wdro_coreset_uniform(const struct WdroDataset *ds,
                         size_t budget,
                         uint64_t seed,
                         struct WdroCoreset **out);

// Support size of a coreset (0 for a null handle).
//
// # Safety
// `cs` must be null or a live handle from a `wdro_coreset_*` constructor.
size_t wdro_coreset_support(const struct WdroCoreset *cs);

// Serialize a coreset to its text document.
//
// # Safety
// `cs` must be valid and `path` a NUL-terminated string.
int wdro_coreset_write(const struct WdroCoreset *cs, const char *path);

// Read a coreset back from its text document.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int wdro_coreset_read(const char *path, struct WdroCoreset **out);

// # Safety
// `cs` must come from a `wdro_coreset_*` constructor and not be freed twice.
void wdro_coreset_free(struct WdroCoreset *cs);

// Worst-case risk of `theta` under the (optionally weighted) empirical
// distribution. `coreset` may be null for the uniform distribution;
// `out_lambda` and `out_at_boundary` may be null when not needed.
//
// # Safety
// Handles must be valid; `theta` must point to `theta_len` readable
// doubles; non-null out pointers must be writable.
int wdro_risk(const struct WdroDataset *ds,
              const struct WdroModel *model,
              const struct WdroAnchors *anchors,
              const struct WdroCoreset *coreset,
              double sigma,
              const double *theta,
              size_t theta_len,
              double *out_risk,
              double *out_lambda,
              int *out_at_boundary);

// Train by projected subgradient descent and write the best iterate into
// `theta_out` (length = dataset dimension). `coreset` may be null;
// `theta0` null starts from the anchor point; `eta0 <= 0` selects the
// default step scale.
//
// # Safety
// Handles must be valid; `theta_out` must point to `dim` writable doubles;
// `theta0`, when non-null, to `dim` readable doubles.
int wdro_train(const struct WdroDataset *ds,
               const struct WdroModel *model,
               const struct WdroAnchors *anchors,
               const struct WdroCoreset *coreset,
               double sigma,
               size_t steps,
               double eta0,
               uint64_t seed,
               const double *theta0,
               double *theta_out,
               double *out_risk);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* WDRO_H */
