#ifndef CTXID_H
#define CTXID_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CtxidStatus {
  CTXID_STATUS_OK = 0,
  CTXID_STATUS_NULL_POINTER = 1,
  CTXID_STATUS_SHAPE = 2,
  CTXID_STATUS_INVALID_ARGUMENT = 3,
  CTXID_STATUS_NON_FINITE = 4,
  CTXID_STATUS_NUMERICAL = 5,
  CTXID_STATUS_CONFIG = 6,
  CTXID_STATUS_FORMAT = 7,
  CTXID_STATUS_IO = 8,
  CTXID_STATUS_PANIC = 9,
} CtxidStatus;

/**
 * Multi-layer perceptron: layer sizes, SiLU hidden activations, parameters.
 */
typedef struct CtxidMlp CtxidMlp;

/**
 * Trained context model loaded from a manifest, with its normalizer if one
 * was saved.
 */
typedef struct CtxidModel CtxidModel;

/**
 * Constants of the two-mass, three-spring chain.
 */
typedef struct CtxidSpringParams {
  double m1;
  double m2;
  double k1;
  double k2;
  double k3;
} CtxidSpringParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len - 1` bytes) and returns the full message length. An
 * empty string means the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ctxid_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ctxid_version(void);

/**
 * `x * sigmoid(x)`.
 */
double ctxid_silu(double x);

/**
 * Creates a network with `n_layers` sizes (input first), SiLU hidden
 * layers and Glorot-uniform weights drawn from `seed`.
 *
 * # Safety
 * `sizes` must point to `n_layers` values and `out` must be writable.
 */
enum CtxidStatus ctxid_mlp_new(const size_t *sizes,
                               size_t n_layers,
                               uint64_t seed,
                               struct CtxidMlp **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `mlp` must come from [`ctxid_mlp_new`] and not be used afterwards.
 */
void ctxid_mlp_free(struct CtxidMlp *mlp);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `mlp` must be null or a live handle.
 */
size_t ctxid_mlp_param_count(const struct CtxidMlp *mlp);

/**
 * Input width, or 0 for a null handle.
 *
 * # Safety
 * `mlp` must be null or a live handle.
 */
size_t ctxid_mlp_input_dim(const struct CtxidMlp *mlp);

/**
 * Output width, or 0 for a null handle.
 *
 * # Safety
 * `mlp` must be null or a live handle.
 */
size_t ctxid_mlp_output_dim(const struct CtxidMlp *mlp);

/**
 * Copies the flat parameter vector into `dst`.
 *
 * # Safety
 * `dst` must point to `len` writable values.
 */
enum CtxidStatus ctxid_mlp_get_params(const struct CtxidMlp *mlp, double *dst, size_t len);

/**
 * Replaces the flat parameter vector. Values must be finite.
 *
 * # Safety
 * `mlp` must be a live handle and `src` must point to `len` values.
 */
enum CtxidStatus ctxid_mlp_set_params(struct CtxidMlp *mlp, const double *src, size_t len);

/**
 * Evaluates the network on one input.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum CtxidStatus ctxid_mlp_forward(const struct CtxidMlp *mlp,
                                   const double *input,
                                   size_t input_len,
                                   double *output,
                                   size_t output_len);

/**
 * Gradients of `upstream . f(input)` with respect to the parameters and the
 * input.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum CtxidStatus ctxid_mlp_backward(const struct CtxidMlp *mlp,
                                    const double *input,
                                    size_t input_len,
                                    const double *upstream,
                                    size_t upstream_len,
                                    double *grad_params,
                                    size_t grad_params_len,
                                    double *grad_input,
                                    size_t grad_input_len);

/**
 * Loads a trained context model from its manifest file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` must be writable.
 */
enum CtxidStatus ctxid_model_load(const char *path, struct CtxidModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`ctxid_model_load`] and not be used afterwards.
 */
void ctxid_model_free(struct CtxidModel *model);

/**
 * Width of `x`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctxid_model_x_dim(const struct CtxidModel *model);

/**
 * Width of `y`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctxid_model_y_dim(const struct CtxidModel *model);

/**
 * Context dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctxid_model_context_dim(const struct CtxidModel *model);

/**
 * Fits a context to `n` observed pairs with `steps` inner steps from zero,
 * using the live parameters. `xs` and `ys` are row-major. Inputs and outputs
 * are in physical units; a saved normalizer is applied internally.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum CtxidStatus ctxid_model_infer_context(const struct CtxidModel *model,
                                           const double *xs,
                                           const double *ys,
                                           size_t n,
                                           size_t steps,
                                           double *context,
                                           size_t context_len);

/**
 * Predicts `y` for one `x` under a context from
 * [`ctxid_model_infer_context`].
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum CtxidStatus ctxid_model_predict(const struct CtxidModel *model,
                                     const double *context,
                                     size_t context_len,
                                     const double *x,
                                     size_t x_len,
                                     double *y,
                                     size_t y_len);

/**
 * Minimum-norm least-squares polynomial fit of degree `degree` to `n`
 * points. Writes `degree + 1` coefficients in ascending order.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum CtxidStatus ctxid_classical_poly_fit(const double *xs,
                                          const double *ys,
                                          size_t n,
                                          size_t degree,
                                          double *coeffs,
                                          size_t coeffs_len);

/**
 * Number of states [`ctxid_spring_simulate`] writes for this horizon,
 * including the initial one, or 0 when the step is invalid.
 */
size_t ctxid_spring_state_count(double duration, double dt);

/**
 * Integrates the spring chain with RK4 from `s0 = (x1, x2, v1, v2)` and
 * writes the states row-major into `states` (`4 * count` values).
 *
 * # Safety
 * `params` and `s0` (4 values) must be readable; `states` must point to
 * `states_len` writable values.
 */
enum CtxidStatus ctxid_spring_simulate(const struct CtxidSpringParams *params,
                                       const double *s0,
                                       double duration,
                                       double dt,
                                       double *states,
                                       size_t states_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXID_H */
