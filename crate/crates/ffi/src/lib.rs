//! C ABI for the highway simulator, the reward function and trained
//! policies.
//!
//! Every fallible function returns an [`HrlStatus`]; on failure the message
//! is kept per thread and can be read with [`hrl_last_error_message`].
//! Handles are opaque and must be released with the matching `_free`
//! function. Panics never cross the boundary; they surface as
//! [`HrlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use highway_rl::checkpoint::{Checkpoint, CheckpointError, CheckpointKind};
use highway_rl::env::{EgoAction, EnvConfig, EnvError, HighwayEnv, Observation, Scenario, StepOutcome, OBS_DIM};
use highway_rl::harness::{AgentKind, EvalPolicy, ExperimentConfig};
use highway_rl::reward::{compute_reward, PeriodSummary, RewardBreakdown, RewardParams, RewardWeights};
use highway_rl::rules::RuleParams;

/// Length of the flattened observation.
pub const HRL_OBS_DIM: usize = 25;
/// Number of discrete actions.
pub const HRL_ACTION_COUNT: usize = 5;

const _: () = assert!(HRL_OBS_DIM == OBS_DIM);
const _: () = assert!(HRL_ACTION_COUNT == EgoAction::COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    Divergence = 6,
    Env = 7,
    EpisodeFinished = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrlScenario {
    Highway = 0,
    Merge = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HrlReward {
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
    pub total: f64,
}

impl From<RewardBreakdown> for HrlReward {
    fn from(r: RewardBreakdown) -> Self {
        Self {
            safety: r.safety,
            comfort: r.comfort,
            efficiency: r.efficiency,
            total: r.total,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrlStepResult {
    pub observation: [f64; HRL_OBS_DIM],
    pub reward: HrlReward,
    pub terminated: bool,
    pub truncated: bool,
    pub crashed: bool,
    pub off_road: bool,
    pub ego_lane: u32,
    pub ego_speed: f64,
    pub sim_time: f64,
}

impl From<&StepOutcome> for HrlStepResult {
    fn from(o: &StepOutcome) -> Self {
        let mut observation = [0.0; HRL_OBS_DIM];
        observation.copy_from_slice(o.observation.as_slice());
        Self {
            observation,
            reward: o.reward.into(),
            terminated: o.terminated,
            truncated: o.truncated,
            crashed: o.info.crashed,
            off_road: o.info.off_road,
            ego_lane: o.info.ego_lane as u32,
            ego_speed: o.info.ego_speed,
            sim_time: o.info.sim_time,
        }
    }
}

/// Inputs of one decision-period reward evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrlPeriod {
    pub crashed: bool,
    pub has_leader: bool,
    /// Bumper gap to the leader in meters; ignored without a leader.
    pub leader_gap: f64,
    pub ego_speed: f64,
    pub mean_abs_accel: f64,
    pub lane_change_initiated: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrlRewardWeights {
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
}

/// Simulator instance.
pub struct HrlEnv {
    inner: HighwayEnv,
}

/// Greedy policy restored from a checkpoint, or a rules / random agent.
pub struct HrlPolicy {
    inner: EvalPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn fail(status: HrlStatus, message: impl Into<String>) -> HrlStatus {
    set_error(message.into());
    status
}

/// Run `f`, turning panics into [`HrlStatus::Panic`].
fn guard<F: FnOnce() -> HrlStatus>(f: F) -> HrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == HrlStatus::Ok {
                set_error(String::new());
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(HrlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn env_status(e: EnvError) -> HrlStatus {
    let status = match e {
        EnvError::EpisodeFinished | EnvError::NotReset => HrlStatus::EpisodeFinished,
        EnvError::InvalidRoad(_) | EnvError::InvalidConfig(_) => HrlStatus::Config,
        _ => HrlStatus::Env,
    };
    fail(status, e.to_string())
}

fn checkpoint_status(e: CheckpointError) -> HrlStatus {
    let status = match e {
        CheckpointError::Io(_) => HrlStatus::Io,
        _ => HrlStatus::Checkpoint,
    };
    fail(status, e.to_string())
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, HrlStatus> {
    if path.is_null() {
        return Err(fail(HrlStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null, and the caller promises a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| fail(HrlStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

fn scenario_of(s: HrlScenario) -> Scenario {
    match s {
        HrlScenario::Highway => Scenario::Highway,
        HrlScenario::Merge => Scenario::Merge,
    }
}

fn boxed_env(config: EnvConfig, out: *mut *mut HrlEnv) -> HrlStatus {
    match HighwayEnv::new(config) {
        Ok(inner) => {
            // SAFETY: `out` was checked non-null by the caller.
            unsafe { *out = Box::into_raw(Box::new(HrlEnv { inner })) };
            HrlStatus::Ok
        }
        Err(e) => env_status(e),
    }
}

/// Create an environment with default parameters for `scenario`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hrl_env_new(scenario: HrlScenario, out: *mut *mut HrlEnv) -> HrlStatus {
    guard(|| {
        if out.is_null() {
            return fail(HrlStatus::NullPointer, "out is null");
        }
        boxed_env(EnvConfig::with_scenario(scenario_of(scenario)), out)
    })
}

/// Create an environment from the `[experiment]`, `[env]`, `[ghr]` and
/// `[reward]` sections of an experiment config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one
/// handle write.
#[no_mangle]
pub unsafe extern "C" fn hrl_env_from_config_file(path: *const c_char, out: *mut *mut HrlEnv) -> HrlStatus {
    guard(|| {
        if out.is_null() {
            return fail(HrlStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ExperimentConfig::load(path) {
            Ok(cfg) => boxed_env(cfg.env_config(), out),
            Err(e) => fail(HrlStatus::Config, e.to_string()),
        }
    })
}

/// Release an environment. Null is ignored.
///
/// # Safety
/// `env` must be null or a handle from `hrl_env_new` /
/// `hrl_env_from_config_file` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hrl_env_free(env: *mut HrlEnv) {
    if !env.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Start an episode; writes `HRL_OBS_DIM` values to `observation`.
///
/// # Safety
/// `env` must be a live handle; `observation` must point to
/// `HRL_OBS_DIM` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hrl_env_reset(env: *mut HrlEnv, seed: u64, observation: *mut f64) -> HrlStatus {
    guard(|| {
        if env.is_null() || observation.is_null() {
            return fail(HrlStatus::NullPointer, "env or observation is null");
        }
        // SAFETY: caller contract.
        let env = unsafe { &mut *env };
        match env.inner.reset(seed) {
            Ok(obs) => {
                // SAFETY: caller provides HRL_OBS_DIM slots.
                unsafe { ptr::copy_nonoverlapping(obs.as_slice().as_ptr(), observation, HRL_OBS_DIM) };
                HrlStatus::Ok
            }
            Err(e) => env_status(e),
        }
    })
}

/// Advance one decision period with action code `action` (0..=4).
///
/// # Safety
/// `env` must be a live handle and `result` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hrl_env_step(env: *mut HrlEnv, action: u32, result: *mut HrlStepResult) -> HrlStatus {
    guard(|| {
        if env.is_null() || result.is_null() {
            return fail(HrlStatus::NullPointer, "env or result is null");
        }
        let Some(action) = u8::try_from(action).ok().and_then(EgoAction::from_code) else {
            return fail(HrlStatus::InvalidArgument, format!("unknown action code {action}"));
        };
        // SAFETY: caller contract.
        let env = unsafe { &mut *env };
        match env.inner.step(action) {
            Ok(outcome) => {
                // SAFETY: caller contract.
                unsafe { *result = HrlStepResult::from(&outcome) };
                HrlStatus::Ok
            }
            Err(e) => env_status(e),
        }
    })
}

/// Load an acting policy from a checkpoint file. DQN and PPO checkpoints
/// act greedily; rules and random checkpoints use default parameters on
/// the road of `scenario`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one
/// handle write.
#[no_mangle]
pub unsafe extern "C" fn hrl_policy_load(
    path: *const c_char,
    scenario: HrlScenario,
    out: *mut *mut HrlPolicy,
) -> HrlStatus {
    guard(|| {
        if out.is_null() {
            return fail(HrlStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ck = match Checkpoint::load(path) {
            Ok(ck) => ck,
            Err(e) => return checkpoint_status(e),
        };
        let agent = match ck.kind {
            CheckpointKind::Dqn => AgentKind::Dqn,
            CheckpointKind::Ppo => AgentKind::Ppo,
            CheckpointKind::Rules => AgentKind::Rules,
            CheckpointKind::Random => AgentKind::Random,
            CheckpointKind::Params => {
                return fail(HrlStatus::Checkpoint, "bare parameter files carry no agent");
            }
        };
        let road = EnvConfig::with_scenario(scenario_of(scenario)).road;
        match EvalPolicy::load(agent, Some(&ck), RuleParams::default(), road) {
            Ok(inner) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(HrlPolicy { inner })) };
                HrlStatus::Ok
            }
            Err(e) => checkpoint_status(e),
        }
    })
}

/// Reset per-episode policy state (rule machine, random stream).
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrl_policy_begin_episode(policy: *mut HrlPolicy, seed: u64) -> HrlStatus {
    guard(|| {
        if policy.is_null() {
            return fail(HrlStatus::NullPointer, "policy is null");
        }
        // SAFETY: caller contract.
        unsafe { &mut *policy }.inner.begin_episode(seed);
        HrlStatus::Ok
    })
}

/// Choose an action code for an `HRL_OBS_DIM` observation.
///
/// # Safety
/// `policy` must be a live handle, `observation` must point to
/// `HRL_OBS_DIM` readable doubles and `action` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hrl_policy_act(policy: *mut HrlPolicy, observation: *const f64, action: *mut u32) -> HrlStatus {
    guard(|| {
        if policy.is_null() || observation.is_null() || action.is_null() {
            return fail(HrlStatus::NullPointer, "policy, observation or action is null");
        }
        // SAFETY: caller provides HRL_OBS_DIM readable values.
        let values = unsafe { std::slice::from_raw_parts(observation, HRL_OBS_DIM) };
        let obs = Observation::from_slice(values).expect("length is HRL_OBS_DIM");
        // SAFETY: caller contract.
        match unsafe { &mut *policy }.inner.act(&obs) {
            Ok(a) => {
                // SAFETY: caller contract.
                unsafe { *action = u32::from(a.code()) };
                HrlStatus::Ok
            }
            Err(e) => fail(HrlStatus::Divergence, e.to_string()),
        }
    })
}

/// Release a policy. Null is ignored.
///
/// # Safety
/// `policy` must be null or a live handle from `hrl_policy_load`.
#[no_mangle]
pub unsafe extern "C" fn hrl_policy_free(policy: *mut HrlPolicy) {
    if !policy.is_null() {
        // SAFETY: caller contract.
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Default balancing weights.
#[no_mangle]
pub extern "C" fn hrl_reward_default_weights() -> HrlRewardWeights {
    let w = RewardWeights::default();
    HrlRewardWeights {
        safety: w.safety,
        comfort: w.comfort,
        efficiency: w.efficiency,
    }
}

/// Reward of one decision period with default thresholds.
///
/// # Safety
/// All pointers must be valid; `weights` may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn hrl_reward_compute(
    period: *const HrlPeriod,
    weights: *const HrlRewardWeights,
    out: *mut HrlReward,
) -> HrlStatus {
    guard(|| {
        if period.is_null() || out.is_null() {
            return fail(HrlStatus::NullPointer, "period or out is null");
        }
        // SAFETY: caller contract.
        let p = unsafe { *period };
        let w = if weights.is_null() {
            RewardWeights::default()
        } else {
            // SAFETY: caller contract.
            let w = unsafe { *weights };
            match RewardWeights::new(w.safety, w.comfort, w.efficiency) {
                Ok(w) => w,
                Err(e) => return fail(HrlStatus::InvalidArgument, e.to_string()),
            }
        };
        let summary = PeriodSummary {
            crashed: p.crashed,
            leader_gap: p.has_leader.then_some(p.leader_gap),
            ego_speed: p.ego_speed,
            mean_abs_accel: p.mean_abs_accel,
            lane_change_initiated: p.lane_change_initiated,
        };
        // SAFETY: caller contract.
        unsafe { *out = compute_reward(&summary, &w, &RewardParams::default()).into() };
        HrlStatus::Ok
    })
}

/// Copy the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hrl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: caller provides `len` bytes; we write `n + 1 <= len`.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
