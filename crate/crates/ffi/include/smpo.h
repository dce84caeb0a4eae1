#ifndef SMPO_H
#define SMPO_H

/* Generated by cbindgen from the smpo-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function in this ABI.
 */
typedef enum {
  /**
   * The call succeeded and all out parameters were written.
   */
  SMPO_STATUS_OK = 0,
  /**
   * A runtime failure: I/O, a malformed file, degenerate statistics, or
   * a non-finite intermediate value.
   */
  SMPO_STATUS_FAILURE = 1,
  /**
   * An argument fell outside its documented range or two dimensions did
   * not line up.
   */
  SMPO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * An iterative computation produced non-finite values.
   */
  SMPO_STATUS_DIVERGENCE = 3,
  /**
   * A required pointer argument was `NULL`.
   */
  SMPO_STATUS_NULL_POINTER = 4,
  /**
   * The library panicked internally; treat the handle as poisoned.
   */
  SMPO_STATUS_PANIC = 5,
} SmpoStatus;

/**
 * Noise-schedule family, mirroring the core crate's schedule kinds.
 */
typedef enum {
  /**
   * Betas interpolate linearly between `beta_min` and `beta_max`.
   */
  SMPO_SCHEDULE_KIND_LINEAR_BETA = 0,
  /**
   * Squared-cosine cumulative retention; ignores the beta arguments.
   */
  SMPO_SCHEDULE_KIND_COSINE = 1,
} SmpoScheduleKind;

/**
 * Hidden-layer nonlinearity of the denoiser MLP.
 */
typedef enum {
  SMPO_ACTIVATION_TANH = 0,
  SMPO_ACTIVATION_SILU = 1,
} SmpoActivation;

/**
 * Opaque handle to a denoiser model bundled with the schedule it was
 * trained (or initialized) against.
 */
typedef struct SmpoModel SmpoModel;

/**
 * Opaque handle to a validated noise schedule.
 */
typedef struct SmpoSchedule SmpoSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never `NULL`.
 */
const char *smpo_version(void);

/**
 * Message of the most recent failure on the calling thread, or `NULL` if
 * no call has failed yet. The pointer stays valid until the next failing
 * call on the same thread.
 */
const char *smpo_last_error_message(void);

/**
 * Builds a noise schedule over timesteps `1..=t_max`. `beta_min` and
 * `beta_max` only apply to the linear-beta family.
 */
SmpoStatus smpo_schedule_new(SmpoScheduleKind kind,
                             size_t t_max,
                             double beta_min,
                             double beta_max,
                             SmpoSchedule **out);

/**
 * Releases a schedule handle; `NULL` is ignored.
 */
void smpo_schedule_free(SmpoSchedule *sched);

/**
 * Number of timesteps in the schedule; 0 if `sched` is `NULL`.
 */
size_t smpo_schedule_t_max(const SmpoSchedule *sched);

/**
 * Per-step retention `alpha(t)`, defined for `t` in `1..=t_max`.
 */
SmpoStatus smpo_schedule_alpha(const SmpoSchedule *sched, size_t t, double *out);

/**
 * Cumulative retention `alpha_bar(t)`, defined for `t` in `0..=t_max` with
 * `alpha_bar(0) = 1` exactly.
 */
SmpoStatus smpo_schedule_alpha_bar(const SmpoSchedule *sched, size_t t, double *out);

/**
 * Noise-to-signal ratio `sigma(t) = sqrt((1 - alpha_bar) / alpha_bar)`,
 * defined for `t` in `0..=t_max` with `sigma(0) = 0`.
 */
SmpoStatus smpo_schedule_sigma(const SmpoSchedule *sched, size_t t, double *out);

/**
 * Forward noising `x_t = sqrt(alpha_bar(t)) x0 + sqrt(1 - alpha_bar(t)) eps`.
 * `x0`, `eps`, and `out_x_t` all have `dim` entries; `t = 0` copies `x0`.
 */
SmpoStatus smpo_schedule_forward_noise(const SmpoSchedule *sched,
                                       const double *x0,
                                       const double *eps,
                                       size_t dim,
                                       size_t t,
                                       double *out_x_t);

/**
 * The noise a forward draw must have used to land on `x_t`:
 * `(x_t - sqrt(alpha_bar(t)) x0) / sqrt(1 - alpha_bar(t))`. Needs `t >= 1`.
 */
SmpoStatus smpo_schedule_implied_noise(const SmpoSchedule *sched,
                                       const double *x_t,
                                       const double *x0,
                                       size_t dim,
                                       size_t t,
                                       double *out_eps);

/**
 * Initializes a fresh denoiser with the given architecture and schedule.
 * Weights are drawn deterministically from `seed`; `t_embed_dim` must be
 * even. The schedule arguments follow `smpo_schedule_new`.
 */
SmpoStatus smpo_model_init(size_t data_dim,
                           size_t cond_dim,
                           size_t hidden_dim,
                           size_t depth,
                           size_t t_embed_dim,
                           SmpoActivation activation,
                           SmpoScheduleKind kind,
                           size_t t_max,
                           double beta_min,
                           double beta_max,
                           uint64_t seed,
                           SmpoModel **out);

/**
 * Loads a checkpoint written by `smpo_model_save` or by the `smpo`
 * command-line tool; the stored schedule is rebuilt alongside the weights.
 */
SmpoStatus smpo_model_load(const char *path, SmpoModel **out);

/**
 * Writes the model and its schedule to a checkpoint file.
 */
SmpoStatus smpo_model_save(const SmpoModel *model, const char *path);

/**
 * Releases a model handle; `NULL` is ignored.
 */
void smpo_model_free(SmpoModel *model);

/**
 * Sample-space dimension of the model; 0 if `model` is `NULL`.
 */
size_t smpo_model_data_dim(const SmpoModel *model);

/**
 * Condition dimension of the model; 0 if `model` is `NULL`.
 */
size_t smpo_model_cond_dim(const SmpoModel *model);

/**
 * Horizon of the model's schedule; 0 if `model` is `NULL`.
 */
size_t smpo_model_t_max(const SmpoModel *model);

/**
 * Total trainable parameter count; 0 if `model` is `NULL`.
 */
size_t smpo_model_param_count(const SmpoModel *model);

/**
 * Classifier-free guided noise prediction at `(x_t, t, cond)`. `x_t` and
 * `out_eps` have `dim = data_dim` entries, `cond` has `cond_dim`;
 * `guidance = 1` is the plain conditional prediction.
 */
SmpoStatus smpo_model_eps_predict(const SmpoModel *model,
                                  const double *x_t,
                                  size_t dim,
                                  size_t t,
                                  const double *cond,
                                  size_t cond_dim,
                                  double guidance,
                                  double *out_eps);

/**
 * Deterministic DDIM draw: starts from the seeded Gaussian at `t_max` and
 * walks `steps` hops down to `t = 0`. `out_x0` has `data_dim` entries; the
 * same seed always yields the same sample.
 */
SmpoStatus smpo_model_sample(const SmpoModel *model,
                             const double *cond,
                             size_t cond_dim,
                             size_t steps,
                             double guidance,
                             uint64_t seed,
                             double *out_x0);

/**
 * DDIM inversion of `x0` up to timestep `t` with ReNoise refinement:
 * every upward hop is taken explicitly and then re-applied
 * `renoise_iters` times with the noise re-estimated at the target latent
 * (`renoise_iters = 0` is plain DDIM inversion). `out_x_t` has `data_dim`
 * entries; `out_residual_before` / `out_residual_after` receive the
 * fixed-point residual of the final hop and may each be `NULL` when the
 * caller does not want them.
 */
SmpoStatus smpo_model_invert(const SmpoModel *model,
                             const double *x0,
                             size_t dim,
                             const double *cond,
                             size_t cond_dim,
                             size_t t,
                             size_t inv_steps,
                             size_t renoise_iters,
                             double guidance,
                             double *out_x_t,
                             double *out_residual_before,
                             double *out_residual_after);

/**
 * Normalizes one reward against pool extremes: `(r - max) / (max - min)`,
 * in `[-1, 0]` for any reward inside the pool. Fails when the pool is
 * degenerate (`max <= min`).
 */
SmpoStatus smpo_normalize_reward(double reward, double pool_min, double pool_max, double *out);

/**
 * Two-way softmax weight of the winner from normalized rewards, i.e.
 * `sigmoid(rw_norm - rl_norm)`. Both inputs must lie in `[-1, 0]`.
 */
SmpoStatus smpo_weight_ratio(double rw_norm, double rl_norm, double *out);

/**
 * Effective preference coefficient `gamma * (2 ratio - 1)` of a stored
 * label; zero exactly when the pair's rewards were equal. Needs `ratio`
 * in `(0, 1)` and `gamma > 0`.
 */
SmpoStatus smpo_label_coefficient(double ratio, double gamma, double *out);

/**
 * Smoothed pairwise loss from per-sample log densities, evaluated two
 * equivalent ways. `out_direct` mixes winner/loser densities with weights
 * `alpha` and `gamma - alpha` before the pairwise loss; `out_reduced`
 * scales the unmixed margin by `2 alpha - gamma`. The two agree to
 * floating-point error; either out pointer may be `NULL` if only one form
 * is wanted.
 */
SmpoStatus smpo_smoothed_pair_loss(double logp_w_theta,
                                   double logp_l_theta,
                                   double logp_w_ref,
                                   double logp_l_ref,
                                   double alpha,
                                   double gamma,
                                   double beta,
                                   double *out_direct,
                                   double *out_reduced);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMPO_H */
