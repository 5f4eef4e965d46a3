use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use highway_rl::checkpoint::{Checkpoint, CheckpointKind};
use highway_rl::dqn::{DqnConfig, DqnLearner};
use highway_rl::env::{EgoAction, EnvConfig, HighwayEnv, Scenario};
use highway_rl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe { hrl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn new_env(scenario: HrlScenario) -> *mut HrlEnv {
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { hrl_env_new(scenario, &mut env) }, HrlStatus::Ok);
    assert!(!env.is_null());
    env
}

#[test]
fn episode_matches_the_rust_api() {
    let env = new_env(HrlScenario::Merge);
    let mut rust_env = HighwayEnv::new(EnvConfig::with_scenario(Scenario::Merge)).unwrap();

    let mut obs = [0.0; HRL_OBS_DIM];
    assert_eq!(unsafe { hrl_env_reset(env, 17, obs.as_mut_ptr()) }, HrlStatus::Ok);
    assert_eq!(obs.as_slice(), rust_env.reset(17).unwrap().as_slice());

    let mut result = std::mem::MaybeUninit::<HrlStepResult>::uninit();
    for k in 0.. {
        let action = EgoAction::ALL[k % 5];
        assert_eq!(
            unsafe { hrl_env_step(env, u32::from(action.code()), result.as_mut_ptr()) },
            HrlStatus::Ok
        );
        let r = unsafe { result.assume_init() };
        let expected = rust_env.step(action).unwrap();
        assert_eq!(r.observation.as_slice(), expected.observation.as_slice());
        assert_eq!(r.reward.total, expected.reward.total);
        assert_eq!((r.terminated, r.truncated), (expected.terminated, expected.truncated));
        if r.terminated || r.truncated {
            break;
        }
    }
    assert_eq!(
        unsafe { hrl_env_step(env, 1, result.as_mut_ptr()) },
        HrlStatus::EpisodeFinished
    );
    assert!(!last_error().is_empty());
    unsafe { hrl_env_free(env) };
}

#[test]
fn argument_errors_have_codes_and_messages() {
    let env = new_env(HrlScenario::Highway);
    let mut obs = [0.0; HRL_OBS_DIM];
    let mut result = std::mem::MaybeUninit::<HrlStepResult>::uninit();
    assert_eq!(unsafe { hrl_env_step(env, 1, result.as_mut_ptr()) }, HrlStatus::EpisodeFinished);
    assert_eq!(unsafe { hrl_env_reset(env, 0, obs.as_mut_ptr()) }, HrlStatus::Ok);
    assert_eq!(last_error(), "");
    assert_eq!(unsafe { hrl_env_step(env, 9, result.as_mut_ptr()) }, HrlStatus::InvalidArgument);
    assert!(last_error().contains("9"));
    assert_eq!(unsafe { hrl_env_reset(env, 0, ptr::null_mut()) }, HrlStatus::NullPointer);
    assert_eq!(unsafe { hrl_env_new(HrlScenario::Merge, ptr::null_mut()) }, HrlStatus::NullPointer);
    unsafe { hrl_env_free(env) };
    unsafe { hrl_env_free(ptr::null_mut()) };

    // truncated copy stays NUL-terminated and reports the full length
    assert_eq!(unsafe { hrl_env_reset(ptr::null_mut(), 0, obs.as_mut_ptr()) }, HrlStatus::NullPointer);
    let mut small = [1 as std::ffi::c_char; 5];
    let full = unsafe { hrl_last_error_message(small.as_mut_ptr(), small.len()) };
    assert!(full > 4);
    assert_eq!(small[4], 0);
}

#[test]
fn config_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "[experiment]\nscenario = \"highway\"\n[env]\nhorizon = 5\n").unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[env]\nhorizn = 5\n").unwrap();

    let mut env = ptr::null_mut();
    let p = CString::new(good.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hrl_env_from_config_file(p.as_ptr(), &mut env) }, HrlStatus::Ok);
    let mut obs = [0.0; HRL_OBS_DIM];
    unsafe { hrl_env_reset(env, 3, obs.as_mut_ptr()) };
    let mut result = std::mem::MaybeUninit::<HrlStepResult>::uninit();
    let mut steps = 0;
    loop {
        assert_eq!(unsafe { hrl_env_step(env, 4, result.as_mut_ptr()) }, HrlStatus::Ok);
        steps += 1;
        let r = unsafe { result.assume_init() };
        if r.terminated || r.truncated {
            break;
        }
    }
    assert!(steps <= 5);
    unsafe { hrl_env_free(env) };

    let p = CString::new(bad.to_str().unwrap()).unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { hrl_env_from_config_file(p.as_ptr(), &mut env) }, HrlStatus::Config);
    assert!(env.is_null());
    assert!(last_error().contains(":2:"), "{}", last_error());
}

#[test]
fn policy_from_checkpoint_acts_like_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dqn.bin");
    let cfg = DqnConfig {
        hidden: vec![8],
        ..DqnConfig::default()
    };
    let learner = DqnLearner::new(cfg, HRL_OBS_DIM, HRL_ACTION_COUNT, 4).unwrap();
    learner.to_checkpoint().save(&path).unwrap();

    let mut policy = ptr::null_mut();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hrl_policy_load(p.as_ptr(), HrlScenario::Merge, &mut policy) }, HrlStatus::Ok);

    let mut env = HighwayEnv::new(EnvConfig::with_scenario(Scenario::Merge)).unwrap();
    let obs = env.reset(8).unwrap();
    let mut action = u32::MAX;
    assert_eq!(unsafe { hrl_policy_act(policy, obs.as_slice().as_ptr(), &mut action) }, HrlStatus::Ok);
    assert_eq!(action as usize, learner.act_greedy(obs.as_slice()).unwrap());
    unsafe { hrl_policy_free(policy) };

    let rules = dir.path().join("rules.bin");
    Checkpoint::new(CheckpointKind::Rules).save(&rules).unwrap();
    let p = CString::new(rules.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hrl_policy_load(p.as_ptr(), HrlScenario::Highway, &mut policy) }, HrlStatus::Ok);
    assert_eq!(unsafe { hrl_policy_begin_episode(policy, 0) }, HrlStatus::Ok);
    assert_eq!(unsafe { hrl_policy_act(policy, obs.as_slice().as_ptr(), &mut action) }, HrlStatus::Ok);
    assert!(action < HRL_ACTION_COUNT as u32);
    unsafe { hrl_policy_free(policy) };

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hrl_policy_load(missing.as_ptr(), HrlScenario::Merge, &mut policy) }, HrlStatus::Io);
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let p = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { hrl_policy_load(p.as_ptr(), HrlScenario::Merge, &mut policy) }, HrlStatus::Checkpoint);
}

#[test]
fn reward_matches_closed_form() {
    let period = HrlPeriod {
        crashed: false,
        has_leader: true,
        leader_gap: 15.0,
        ego_speed: 20.0,
        mean_abs_accel: 2.5,
        lane_change_initiated: true,
    };
    let mut r = HrlReward::default();
    assert_eq!(unsafe { hrl_reward_compute(&period, ptr::null(), &mut r) }, HrlStatus::Ok);
    // headway 0.75 s: safety -0.5 * (1 - 0.5); comfort -(0.5)^2 - 0.1
    assert_eq!(r.safety, -0.25);
    assert!((r.comfort - -0.35).abs() < 1e-15);
    assert_eq!(r.efficiency, 0.0);
    let w = hrl_reward_default_weights();
    assert_eq!(r.total, w.safety * r.safety + w.comfort * r.comfort + w.efficiency * r.efficiency);

    let bad = HrlRewardWeights {
        safety: -1.0,
        comfort: 0.0,
        efficiency: 0.0,
    };
    assert_eq!(unsafe { hrl_reward_compute(&period, &bad, &mut r) }, HrlStatus::InvalidArgument);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(hrl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/highway_rl.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["hrl_env_new", "hrl_env_step", "hrl_policy_act", "hrl_last_error_message", "HRL_OBS_DIM"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"highway_rl.h\"\nint main(void) { HrlStepResult r; HrlEnv *e = 0; \
         return hrl_env_step(e, 1, &r) == HRL_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let include = header.parent().unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include)
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler on PATH; header syntax not checked"),
    }
}
