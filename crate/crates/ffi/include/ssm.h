#ifndef SSM_H
#define SSM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum SsmStatus {
  SSM_STATUS_OK = 0,
  SSM_STATUS_NULL_POINTER = 1,
  SSM_STATUS_INVALID_ARGUMENT = 2,
  SSM_STATUS_CONFIG = 3,
  SSM_STATUS_SHAPE = 4,
  SSM_STATUS_NON_FINITE = 5,
  SSM_STATUS_DIVERGED = 6,
  SSM_STATUS_IO = 7,
  SSM_STATUS_FORMAT = 8,
  SSM_STATUS_INTERNAL = 9,
  SSM_STATUS_PANIC = 10,
} SsmStatus;

/**
 * A trained score network with its frozen conditioner.
 */
typedef struct SsmModel SsmModel;

/**
 * Refinement sampler settings.
 */
typedef struct SsmInferOptions {
  double epsilon;
  /**
   * Steps at the last level.
   */
  size_t last_steps;
  /**
   * Cap on steps at every other level.
   */
  size_t step_cap;
  /**
   * End-signal factor: `beta_i = gamma * sigma_i`.
   */
  double gamma;
  bool use_noise;
  bool fast;
  uint64_t seed;
  /**
   * Predictions are averaged over this many runs.
   */
  size_t repeats;
} SsmInferOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ssm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ssm_version(void);

/**
 * Loads a score checkpoint and its conditioner checkpoint.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out_model` must be writable. Free the
 * model with [`ssm_model_free`].
 */
enum SsmStatus ssm_model_load(const char *score_path,
                              const char *conditioner_path,
                              struct SsmModel **out_model);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`ssm_model_load`] and not be used afterwards.
 */
void ssm_model_free(struct SsmModel *model);

/**
 * Input width, output width and number of noise levels.
 *
 * # Safety
 * `model` must be a live handle; each output pointer may be null.
 */
enum SsmStatus ssm_model_dims(const struct SsmModel *model,
                              size_t *input_dim,
                              size_t *output_dim,
                              size_t *levels);

/**
 * Sampler settings the model was trained with. An `auto` last-step count falls
 * back to the step cap. Averaging defaults to a single run.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SsmStatus ssm_infer_options_default(const struct SsmModel *model, struct SsmInferOptions *out);

/**
 * Predicts `rows` raw inputs laid out row-major in `x`, writing
 * `rows * output_dim` raw-scale values to `out`. Null `options` uses
 * [`ssm_infer_options_default`]. Refinement starts from the training-target mean.
 *
 * # Safety
 * `x` must hold `rows * input_dim` values and `out` must hold `out_len` values.
 */
enum SsmStatus ssm_model_predict(const struct SsmModel *model,
                                 const double *x,
                                 size_t rows,
                                 const struct SsmInferOptions *options,
                                 double *out,
                                 size_t out_len);

/**
 * Geometric noise levels from `sigma_first` down to `sigma_last`.
 *
 * # Safety
 * `out` must hold `levels` values.
 */
enum SsmStatus ssm_schedule_sigmas(double sigma_first,
                                   double sigma_last,
                                   size_t levels,
                                   double *out);

/**
 * Noise-free iterate after `t` last-level steps at rate `r` with the exact score.
 *
 * # Safety
 * `y0`, `target` and `out` must each hold `dim` values.
 */
enum SsmStatus ssm_closed_form_iterate(const double *y0,
                                       const double *target,
                                       size_t dim,
                                       double rate,
                                       uint32_t t,
                                       double *out);

/**
 * Smallest last-level step count after which the decay of a starting distance
 * of `sqrt(dim) * beta_prev` is dominated by the accumulated network error.
 *
 * # Safety
 * `out` must be writable.
 */
enum SsmStatus ssm_min_last_steps(double error_norm,
                                  size_t dim,
                                  double beta_prev,
                                  double rate,
                                  size_t *out);

/**
 * Runs the randomized checks of the refinement closed forms and bounds.
 * `passed` is set to whether every check held.
 *
 * # Safety
 * `passed` must be writable.
 */
enum SsmStatus ssm_theory_verify(size_t trials, uint64_t seed, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSM_H */
