#ifndef HIGHWAY_RL_H
#define HIGHWAY_RL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of the flattened observation.
 */
#define HRL_OBS_DIM 25

/**
 * Number of discrete actions.
 */
#define HRL_ACTION_COUNT 5

typedef enum HrlStatus {
  HRL_STATUS_OK = 0,
  HRL_STATUS_NULL_POINTER = 1,
  HRL_STATUS_INVALID_ARGUMENT = 2,
  HRL_STATUS_CONFIG = 3,
  HRL_STATUS_IO = 4,
  HRL_STATUS_CHECKPOINT = 5,
  HRL_STATUS_DIVERGENCE = 6,
  HRL_STATUS_ENV = 7,
  HRL_STATUS_EPISODE_FINISHED = 8,
  HRL_STATUS_PANIC = 9,
} HrlStatus;

typedef enum HrlScenario {
  HRL_SCENARIO_HIGHWAY = 0,
  HRL_SCENARIO_MERGE = 1,
} HrlScenario;

/**
 * Simulator instance.
 */
typedef struct HrlEnv HrlEnv;

/**
 * Greedy policy restored from a checkpoint, or a rules / random agent.
 */
typedef struct HrlPolicy HrlPolicy;

typedef struct HrlReward {
  double safety;
  double comfort;
  double efficiency;
  double total;
} HrlReward;

typedef struct HrlStepResult {
  double observation[HRL_OBS_DIM];
  struct HrlReward reward;
  bool terminated;
  bool truncated;
  bool crashed;
  bool off_road;
  uint32_t ego_lane;
  double ego_speed;
  double sim_time;
} HrlStepResult;

typedef struct HrlRewardWeights {
  double safety;
  double comfort;
  double efficiency;
} HrlRewardWeights;

/**
 * Inputs of one decision-period reward evaluation.
 */
typedef struct HrlPeriod {
  bool crashed;
  bool has_leader;
  /**
   * Bumper gap to the leader in meters; ignored without a leader.
   */
  double leader_gap;
  double ego_speed;
  double mean_abs_accel;
  bool lane_change_initiated;
} HrlPeriod;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an environment with default parameters for `scenario`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum HrlStatus hrl_env_new(enum HrlScenario scenario, struct HrlEnv **out);

/**
 * Create an environment from the `[experiment]`, `[env]`, `[ghr]` and
 * `[reward]` sections of an experiment config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for one
 * handle write.
 */
enum HrlStatus hrl_env_from_config_file(const char *path, struct HrlEnv **out);

/**
 * Release an environment. Null is ignored.
 *
 * # Safety
 * `env` must be null or a handle from `hrl_env_new` /
 * `hrl_env_from_config_file` that has not been freed.
 */
void hrl_env_free(struct HrlEnv *env);

/**
 * Start an episode; writes `HRL_OBS_DIM` values to `observation`.
 *
 * # Safety
 * `env` must be a live handle; `observation` must point to
 * `HRL_OBS_DIM` writable doubles.
 */
enum HrlStatus hrl_env_reset(struct HrlEnv *env, uint64_t seed, double *observation);

/**
 * Advance one decision period with action code `action` (0..=4).
 *
 * # Safety
 * `env` must be a live handle and `result` valid for one write.
 */
enum HrlStatus hrl_env_step(struct HrlEnv *env, uint32_t action, struct HrlStepResult *result);

/**
 * Load an acting policy from a checkpoint file. DQN and PPO checkpoints
 * act greedily; rules and random checkpoints use default parameters on
 * the road of `scenario`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for one
 * handle write.
 */
enum HrlStatus hrl_policy_load(const char *path, enum HrlScenario scenario, struct HrlPolicy **out);

/**
 * Reset per-episode policy state (rule machine, random stream).
 *
 * # Safety
 * `policy` must be a live handle.
 */
enum HrlStatus hrl_policy_begin_episode(struct HrlPolicy *policy, uint64_t seed);

/**
 * Choose an action code for an `HRL_OBS_DIM` observation.
 *
 * # Safety
 * `policy` must be a live handle, `observation` must point to
 * `HRL_OBS_DIM` readable doubles and `action` be valid for one write.
 */
enum HrlStatus hrl_policy_act(struct HrlPolicy *policy,
                              const double *observation,
                              uint32_t *action);

/**
 * Release a policy. Null is ignored.
 *
 * # Safety
 * `policy` must be null or a live handle from `hrl_policy_load`.
 */
void hrl_policy_free(struct HrlPolicy *policy);

/**
 * Default balancing weights.
 */
struct HrlRewardWeights hrl_reward_default_weights(void);

/**
 * Reward of one decision period with default thresholds.
 *
 * # Safety
 * All pointers must be valid; `weights` may be null for the defaults.
 */
enum HrlStatus hrl_reward_compute(const struct HrlPeriod *period,
                                  const struct HrlRewardWeights *weights,
                                  struct HrlReward *out);

/**
 * Copy the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hrl_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hrl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIGHWAY_RL_H */
