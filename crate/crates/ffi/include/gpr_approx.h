#ifndef GPR_APPROX_H
#define GPR_APPROX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GprKernel {
  GPR_KERNEL_ISOTROPIC = 0,
  GPR_KERNEL_ARD = 1,
} GprKernel;

typedef enum GprStatus {
  GPR_STATUS_OK = 0,
  GPR_STATUS_NULL_POINTER = 1,
  GPR_STATUS_INVALID_ARGUMENT = 2,
  GPR_STATUS_DIMENSION_MISMATCH = 3,
  GPR_STATUS_NOT_POSITIVE_DEFINITE = 4,
  GPR_STATUS_NON_FINITE = 5,
  GPR_STATUS_DEGENERATE = 6,
  GPR_STATUS_IO = 7,
  GPR_STATUS_PANIC = 8,
  GPR_STATUS_INTERNAL = 9,
} GprStatus;

typedef enum GprMethod {
  GPR_METHOD_EXACT = 0,
  GPR_METHOD_SOD = 1,
  GPR_METHOD_FITC = 2,
  GPR_METHOD_LOCAL = 3,
} GprMethod;

typedef enum GprSelector {
  GPR_SELECTOR_RANDOM = 0,
  GPR_SELECTOR_FPC = 1,
} GprSelector;

typedef enum GprSynthetic {
  GPR_SYNTHETIC_SYNTH2 = 0,
  GPR_SYNTHETIC_SYNTH8 = 1,
} GprSynthetic;

// A train/test dataset.
typedef struct GprDataset GprDataset;

// A trained model.
typedef struct GprModel GprModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Number of log-hyperparameters for `kernel` on `dim` inputs.
size_t gpr_num_params(enum GprKernel kernel, size_t dim);

// Copies the message of the last failure on this thread into `buf`,
// truncated and NUL-terminated. Returns the full message length, or 0 when
// the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t gpr_last_error_message(char *buf, size_t len);

// Trains a model on `n × dim` inputs `x` and targets `y`.
//
// `m` is the subset size (SoD), inducing count (FITC) or leaf capacity
// (Local) and is ignored for `GPR_METHOD_EXACT`; `selector` applies to SoD
// and FITC.
//
// # Safety
// `x` must hold `n * dim` values, `y` `n` values and `params`
// `n_params` values. `out` must be valid for writes.
enum GprStatus gpr_model_train(enum GprMethod method,
                               const double *x,
                               size_t n,
                               size_t dim,
                               const double *y,
                               size_t m,
                               enum GprSelector selector,
                               uint64_t seed,
                               enum GprKernel kernel,
                               const double *params,
                               size_t n_params,
                               struct GprModel **out);

// Predicts at `t × dim` test inputs. Any of the three output buffers of
// length `t` may be null.
//
// # Safety
// `model` must come from [`gpr_model_train`]; `xstar` must hold `t * dim`
// values and each non-null output `t` values.
enum GprStatus gpr_model_predict(const struct GprModel *model,
                                 const double *xstar,
                                 size_t t,
                                 size_t dim,
                                 double *mean,
                                 double *latent_variance,
                                 double *observation_variance);

// Input dimension the model was trained on, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from [`gpr_model_train`].
size_t gpr_model_dim(const struct GprModel *model);

// # Safety
// `model` must be null or come from [`gpr_model_train`] and not be used again.
void gpr_model_free(struct GprModel *model);

// Exact log marginal likelihood and its gradient (length `n_params`, may be
// null) with respect to the log-hyperparameters.
//
// # Safety
// Buffer sizes as in [`gpr_model_train`]; `value` must be valid for writes.
enum GprStatus gpr_exact_logml(const double *x,
                               size_t n,
                               size_t dim,
                               const double *y,
                               enum GprKernel kernel,
                               const double *params,
                               size_t n_params,
                               double *value,
                               double *grad);

// Maximizes the exact log marginal likelihood from the standard starting
// point using at most `max_evaluations` objective calls. Writes the learned
// log-hyperparameters (length [`gpr_num_params`]) to `params_out`.
//
// # Safety
// `x` must hold `n * dim` values, `y` `n` values and `params_out`
// `gpr_num_params(kernel, dim)` writable values.
enum GprStatus gpr_learn_hyperparameters(const double *x,
                                         size_t n,
                                         size_t dim,
                                         const double *y,
                                         enum GprKernel kernel,
                                         size_t max_evaluations,
                                         double *params_out);

// Draws one of the built-in synthetic benchmarks.
//
// # Safety
// `out` must be valid for writes.
enum GprStatus gpr_dataset_synthetic(enum GprSynthetic kind,
                                     size_t n_train,
                                     size_t n_test,
                                     uint64_t seed,
                                     struct GprDataset **out);

// Writes the training size, test size and input dimension. Any output may be null.
//
// # Safety
// `dataset` must come from [`gpr_dataset_synthetic`].
enum GprStatus gpr_dataset_shape(const struct GprDataset *dataset,
                                 size_t *n_train,
                                 size_t *n_test,
                                 size_t *dim);

// Copies the training (`test == false`) or test split into row-major `x`
// and `y`. Either output may be null.
//
// # Safety
// `x` must hold `rows * dim` and `y` `rows` writable values for the chosen split.
enum GprStatus gpr_dataset_copy(const struct GprDataset *dataset, bool test, double *x, double *y);

// # Safety
// `dataset` must be null or come from [`gpr_dataset_synthetic`] and not be used again.
void gpr_dataset_free(struct GprDataset *dataset);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPR_APPROX_H */
