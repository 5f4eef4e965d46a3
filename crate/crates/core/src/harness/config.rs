//! Experiment configuration files.
//!
//! TOML with one table per module. Every key is optional and unknown keys
//! are rejected. Parse and validation errors name the offending line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::env::{EnvConfig, GhrParams, RoadConfig, Scenario};
use crate::ppo::PpoConfig;
use crate::reward::{RewardParams, RewardWeights};
use crate::rules::RuleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Ppo,
    Rules,
    Random,
}

impl AgentKind {
    pub fn is_learned(self) -> bool {
        matches!(self, AgentKind::Dqn | AgentKind::Ppo)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ppo => "ppo",
            AgentKind::Rules => "rules",
            AgentKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub agent: AgentKind,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub total_env_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            agent: AgentKind::Ppo,
            scenario: Scenario::Merge,
            seeds: vec![0],
            total_env_steps: 51_200,
            eval_every: 10_240,
            eval_episodes: 10,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Road geometry and episode shape. The scenario comes from
/// `[experiment]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub lane_count: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub merge_ramp_end_x: f64,
    pub traffic_count: usize,
    pub horizon: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let road = RoadConfig::default();
        let env = EnvConfig::default();
        Self {
            lane_count: road.lane_count,
            lane_width: road.lane_width,
            road_length: road.road_length,
            merge_ramp_end_x: road.merge_ramp_end_x,
            traffic_count: env.traffic_count,
            horizon: env.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub safety_weight: f64,
    pub comfort_weight: f64,
    pub efficiency_weight: f64,
    pub tau_safe: f64,
    pub a_max: f64,
    pub kappa_lane_change: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        let p = RewardParams::default();
        Self {
            safety_weight: w.safety,
            comfort_weight: w.comfort,
            efficiency_weight: w.efficiency,
            tau_safe: p.tau_safe,
            a_max: p.a_max,
            kappa_lane_change: p.kappa_lane_change,
            v_min: p.v_min,
            v_max: p.v_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Agents to evaluate, in table order. Empty means all four.
    pub agents: Vec<AgentKind>,
    /// Checkpoint path per learned agent.
    pub checkpoints: BTreeMap<AgentKind, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    pub ghr: GhrParams,
    pub reward: RewardSection,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub rules: RuleParams,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    /// 1-based line of the offending entry, when known.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
fn locate(source: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut in_section = false;
    let mut header = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line.trim_start_matches('[').trim_end_matches(']').trim() == section;
            if in_section {
                header = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim().trim_matches('"');
                if name == k && line.contains('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(source).map_err(|e| ConfigError {
            path: None,
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        })?;
        config.validate().map_err(|(section, key, message)| ConfigError {
            path: None,
            // sub-config validators name the offending key first
            line: locate(source, section, key.or_else(|| message.split_whitespace().next())),
            message: match key {
                Some(k) => format!("[{section}] {k}: {message}"),
                None => format!("[{section}] {message}"),
            },
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&source).map_err(|mut e| {
            e.path = Some(path.to_path_buf());
            e
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic checks; errors carry `(section, key, message)`.
    fn validate(&self) -> Result<(), (&'static str, Option<&'static str>, String)> {
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return Err(("experiment", Some("seeds"), "at least one seed is required".into()));
        }
        if x.eval_every == 0 {
            return Err(("experiment", Some("eval_every"), "must be >= 1".into()));
        }
        if x.eval_episodes == 0 {
            return Err(("experiment", Some("eval_episodes"), "must be >= 1".into()));
        }
        let e = &self.env;
        if e.lane_count == 0 || (x.scenario == Scenario::Merge && e.lane_count < 2) {
            return Err((
                "env",
                Some("lane_count"),
                format!("{} is too few lanes for the {} scenario", e.lane_count, x.scenario),
            ));
        }
        if !(e.lane_width > 0.0) {
            return Err(("env", Some("lane_width"), "must be > 0".into()));
        }
        if e.horizon == 0 {
            return Err(("env", Some("horizon"), "must be >= 1".into()));
        }
        self.env_config().validate().map_err(|err| ("env", None, err.to_string()))?;
        self.ghr.validate().map_err(|m| ("ghr", None, m))?;
        self.reward_weights().validate().map_err(|m| ("reward", None, m.to_string()))?;
        self.reward_params().validate().map_err(|m| ("reward", None, m.to_string()))?;
        self.dqn.validate().map_err(|m| ("dqn", None, m))?;
        self.ppo.validate().map_err(|m| ("ppo", None, m))?;
        self.rules.validate().map_err(|m| ("rules", None, m))?;
        Ok(())
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            safety: self.reward.safety_weight,
            comfort: self.reward.comfort_weight,
            efficiency: self.reward.efficiency_weight,
        }
    }

    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            tau_safe: self.reward.tau_safe,
            a_max: self.reward.a_max,
            kappa_lane_change: self.reward.kappa_lane_change,
            v_min: self.reward.v_min,
            v_max: self.reward.v_max,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            road: RoadConfig {
                lane_count: self.env.lane_count,
                lane_width: self.env.lane_width,
                road_length: self.env.road_length,
                scenario: self.experiment.scenario,
                merge_ramp_end_x: self.env.merge_ramp_end_x,
            },
            traffic_count: self.env.traffic_count,
            horizon: self.env.horizon,
            ghr: self.ghr,
            reward_weights: self.reward_weights(),
            reward_params: self.reward_params(),
        }
    }
}

/// Reference text for `--help`: every key with its default.
pub const CONFIG_REFERENCE: &str = "\
CONFIG FILE (TOML; every key optional, unknown keys are errors)

[experiment]
  agent = \"ppo\"            dqn | ppo | rules | random
  scenario = \"merge\"       highway | merge
  seeds = [0]              one independent run per seed
  total_env_steps = 51200  environment (decision) steps per run
  eval_every = 10240       env steps between greedy evaluations
  eval_episodes = 10       episodes per evaluation
  out_dir = \"runs\"         output root; --out overrides

[env]
  lane_count = 3           lanes, the merge ramp is the last one
  lane_width = 4.0         m
  road_length = 1000.0     m, reaching it truncates the episode
  merge_ramp_end_x = 300.0 m, end of the merge ramp
  traffic_count = 6        traffic vehicles
  horizon = 40             decision steps before truncation

[ghr]                      a = c * v^m * dv / dx^l, reaction delay tau
  c = 15.0
  m = 0.0
  l = 2.0
  tau = 0.0                s, multiple of the 0.1 s substep

[reward]
  safety_weight = 1.0
  comfort_weight = 0.3
  efficiency_weight = 0.7
  tau_safe = 1.5           s, headway without safety penalty
  a_max = 5.0              m/s^2, comfort normaliser
  kappa_lane_change = 0.1  comfort cost of starting a lane change, in [0, 1]
  v_min = 20.0             m/s, efficiency zero point
  v_max = 30.0             m/s, efficiency saturation

[dqn]
  gamma = 0.99
  learning_rate = 0.001
  batch_size = 64
  buffer_capacity = 50000
  target_sync_every = 1000
  target_sync_unit = \"gradient_steps\"   gradient_steps | env_steps
  epsilon_start = 1.0
  epsilon_end = 0.05
  epsilon_decay_steps = 10000
  learn_start = 1000       transitions stored before learning starts
  hidden = [128, 128]
  activation = \"relu\"      relu | tanh

[ppo]
  clip_epsilon = 0.2
  gae_lambda = 0.95
  gamma = 0.99
  rollout_length = 2048
  epochs = 10
  minibatch_size = 256     must divide rollout_length
  policy_lr = 0.0003
  value_lr = 0.001
  entropy_coef = 0.01
  normalize_advantages = true
  hidden = [128, 128]
  activation = \"tanh\"      relu | tanh

[rules]
  headway_change_trigger = 2.0   s
  gap_accept_front = 15.0        m
  gap_accept_rear = 10.0         m
  speed_advantage_min = 2.0      m/s

[compare]
  agents = [\"dqn\", \"ppo\", \"rules\", \"random\"]
  checkpoints = { dqn = \"runs/dqn/seed_0/checkpoint.bin\", ppo = \"...\" }
";
