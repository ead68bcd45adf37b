#ifndef FISHFORM_H
#define FISHFORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of one observation vector.
 */
#define FF_OBS_DIM 11

/**
 * Number of discrete actions.
 */
#define FF_NUM_ACTIONS 15

typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_ARGUMENT = 2,
  FF_STATUS_IO = 3,
  FF_STATUS_INCOMPATIBLE_CHECKPOINT = 4,
  FF_STATUS_EPISODE_FINISHED = 5,
  FF_STATUS_RUNTIME = 6,
  FF_STATUS_PANIC = 7,
} FfStatus;

/**
 * Simulation environment handle.
 */
typedef struct FfEnv FfEnv;

/**
 * Trained policy handle.
 */
typedef struct FfPolicy FfPolicy;

/**
 * Result of one environment step.
 */
typedef struct FfStepInfo {
  double team_reward;
  bool done;
} FfStepInfo;

/**
 * Evaluation metrics (cm² for `*_mse`, cm for `*_rmse`).
 */
typedef struct FfErrors {
  double err_t_mse;
  double err_t_rmse;
  double err_f_mse;
  double err_f_rmse;
} FfErrors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ff_last_error(void);

/**
 * Create an environment of `n_agents` robots on a circle of `radius` cm
 * with the named formation (see the CLI's `--formation`).
 *
 * # Safety
 * `formation` must be a nul-terminated string and `out` a valid pointer.
 */
enum FfStatus ff_env_new(size_t n_agents,
                         double radius,
                         const char *formation,
                         bool noise,
                         uint64_t seed,
                         struct FfEnv **out);

/**
 * Release an environment. Null is ignored.
 *
 * # Safety
 * `env` must come from [`ff_env_new`] and not be used afterwards.
 */
void ff_env_free(struct FfEnv *env);

/**
 * Number of agents, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t ff_env_n_agents(const struct FfEnv *env);

/**
 * Start a new episode and write the initial observations
 * (`n_agents × FF_OBS_DIM` values, physical units) to `obs_out`.
 *
 * # Safety
 * `env` must be a live handle and `obs_out` must hold `obs_len` doubles.
 */
enum FfStatus ff_env_reset(struct FfEnv *env, double *obs_out, size_t obs_len);

/**
 * Apply one joint action (`n_agents` action ids) and write the next
 * observations and step information.
 *
 * # Safety
 * `env` must be live, `actions` must hold `n_actions` values, `obs_out`
 * `obs_len` doubles, and `info` must be valid or null.
 */
enum FfStatus ff_env_step(struct FfEnv *env,
                          const uint32_t *actions,
                          size_t n_actions,
                          double *obs_out,
                          size_t obs_len,
                          struct FfStepInfo *info);

/**
 * Write the true pose of every agent as `(x, y, heading)` triples.
 *
 * # Safety
 * `env` must be live and `out` must hold `len` doubles.
 */
enum FfStatus ff_env_poses(const struct FfEnv *env, double *out, size_t len);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum FfStatus ff_policy_load(const char *path, struct FfPolicy **out);

/**
 * Release a policy. Null is ignored.
 *
 * # Safety
 * `policy` must come from [`ff_policy_load`] and not be used afterwards.
 */
void ff_policy_free(struct FfPolicy *policy);

/**
 * Greedy actions for `n_agents` observations in physical units (as
 * written by [`ff_env_reset`] / [`ff_env_step`]).
 *
 * # Safety
 * `obs` must hold `n_agents × FF_OBS_DIM` doubles and `actions_out`
 * `n_agents` values.
 */
enum FfStatus ff_policy_act(const struct FfPolicy *policy,
                            const double *obs,
                            size_t n_agents,
                            uint32_t *actions_out);

/**
 * Greedy evaluation of a policy on a named formation.
 *
 * # Safety
 * `policy` must be live, `formation` nul-terminated, `out` valid.
 */
enum FfStatus ff_evaluate(const struct FfPolicy *policy,
                          size_t n_agents,
                          double radius,
                          const char *formation,
                          size_t episodes,
                          size_t episode_length,
                          size_t settle_steps,
                          bool noise,
                          uint64_t seed,
                          struct FfErrors *out);

/**
 * Library version as a static nul-terminated string.
 */
const char *ff_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FISHFORM_H */
