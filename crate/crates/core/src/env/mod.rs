//! Seedable highway and on-ramp merge micro-simulator.
//!
//! Vehicles are point masses with a box footprint. The ego vehicle is driven
//! by discrete meta-actions executed over a 1 s decision period (ten Euler
//! sub-steps of 0.1 s): a proportional speed controller tracks the ego target
//! speed and lane changes are a constant-rate lateral slew. Traffic keeps its
//! lane and follows the GHR law.
//!
//! Coordinates: `x` is the longitudinal position of the vehicle center, `y`
//! the lateral position with `y = 0` at the center of lane 0 and lane `i`
//! centered at `i * lane_width`. Lane 0 is the leftmost lane, so `LaneLeft`
//! decrements the lane index. In the merge scenario the highest lane index is
//! the on-ramp, which ends at `merge_ramp_end_x`.

mod collision;
mod ghr;
mod observation;

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{compute_reward, PeriodSummary, RewardBreakdown, RewardParams, RewardWeights};

pub use collision::{boxes_overlap, collision_check};
pub use ghr::{bumper_gap, ghr_acceleration, ghr_response, speed_tracking, GhrParams};
pub use observation::{
    encode_observation, nearest_indices, Observation, FEATURE_COUNT, NEIGHBOR_COUNT, OBS_DIM,
    OBS_ROWS, X_RANGE, Y_RANGE, V_RANGE,
};

/// Sub-step length in seconds.
pub const DT: f64 = 0.1;
/// Sub-steps per decision period.
pub const SUBSTEPS: usize = 10;
pub const DECISION_PERIOD: f64 = DT * SUBSTEPS as f64;
/// Longitudinal acceleration limit (m/s^2) for every vehicle.
pub const ACCEL_LIMIT: f64 = 5.0;
/// Proportional gain of the speed controller (1/s).
pub const SPEED_GAIN: f64 = 1.0;
/// Lateral slew rate during lane changes (m/s).
pub const LATERAL_RATE: f64 = 4.0;
pub const MAX_SPEED: f64 = 40.0;

pub const EGO_INITIAL_SPEED: f64 = 25.0;
pub const TARGET_SPEED_STEP: f64 = 5.0;
pub const TARGET_SPEED_MIN: f64 = 10.0;
pub const TARGET_SPEED_MAX: f64 = 30.0;

pub const TRAFFIC_SPEED_MIN: f64 = 20.0;
pub const TRAFFIC_SPEED_MAX: f64 = 28.0;
/// Longitudinal window (relative to the ego spawn point) for traffic spawns.
pub const SPAWN_X_MIN: f64 = -40.0;
pub const SPAWN_X_MAX: f64 = 260.0;
/// Minimum center spacing between spawned vehicles sharing a lane.
pub const SPAWN_MIN_SPACING: f64 = 25.0;
const SPAWN_ATTEMPTS: usize = 10_000;

/// Pavement beyond the ramp end. An ego still in the ramp lane past
/// `merge_ramp_end_x + RAMP_RUNOUT` has left the road.
pub const RAMP_RUNOUT: f64 = 40.0;

pub const VEHICLE_LENGTH: f64 = 5.0;
pub const VEHICLE_WIDTH: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid road configuration: {0}")]
    InvalidRoad(String),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("environment stepped before reset")]
    NotReset,
    #[error("episode already finished; call reset before stepping again")]
    EpisodeFinished,
    #[error("could not place {0} traffic vehicles without overlap")]
    SpawnFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Highway,
    Merge,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Highway => f.write_str("highway"),
            Scenario::Merge => f.write_str("merge"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub scenario: Scenario,
    pub merge_ramp_end_x: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 4.0,
            road_length: 1000.0,
            scenario: Scenario::Highway,
            merge_ramp_end_x: 300.0,
        }
    }
}

impl RoadConfig {
    pub fn merge() -> Self {
        Self {
            scenario: Scenario::Merge,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.lane_count < 2 {
            return Err(EnvError::InvalidRoad(format!(
                "lane_count must be >= 2 (got {})",
                self.lane_count
            )));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(EnvError::InvalidRoad(format!(
                "lane_width must be > 0 (got {})",
                self.lane_width
            )));
        }
        if !(self.road_length > 0.0 && self.road_length.is_finite()) {
            return Err(EnvError::InvalidRoad(format!(
                "road_length must be > 0 (got {})",
                self.road_length
            )));
        }
        if self.scenario == Scenario::Merge
            && !(self.merge_ramp_end_x > 0.0 && self.merge_ramp_end_x < self.road_length)
        {
            return Err(EnvError::InvalidRoad(format!(
                "merge_ramp_end_x must lie in (0, road_length) (got {})",
                self.merge_ramp_end_x
            )));
        }
        Ok(())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    /// Lane whose center is nearest to `y`.
    pub fn lane_of(&self, y: f64) -> usize {
        let idx = (y / self.lane_width).round();
        idx.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    pub fn ramp_lane(&self) -> Option<usize> {
        match self.scenario {
            Scenario::Highway => None,
            Scenario::Merge => Some(self.lane_count - 1),
        }
    }

    /// Lateral extent of the pavement, `(min_y, max_y)`.
    pub fn lateral_bounds(&self) -> (f64, f64) {
        let half = 0.5 * self.lane_width;
        (-half, self.lane_center(self.lane_count - 1) + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    /// Commanded longitudinal acceleration.
    pub a: f64,
    pub lane_target: usize,
    pub length: f64,
    pub width: f64,
    pub crashed: bool,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, v: f64, lane_target: usize) -> Self {
        Self {
            x,
            y,
            v,
            a: 0.0,
            lane_target,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            crashed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum EgoAction {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Faster = 3,
    Slower = 4,
}

impl EgoAction {
    pub const COUNT: usize = 5;
    pub const ALL: [EgoAction; 5] = [
        EgoAction::LaneLeft,
        EgoAction::Idle,
        EgoAction::LaneRight,
        EgoAction::Faster,
        EgoAction::Slower,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, EgoAction::LaneLeft | EgoAction::LaneRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub road: RoadConfig,
    pub traffic_count: usize,
    /// Decision steps before truncation.
    pub horizon: usize,
    pub ghr: GhrParams,
    pub reward_weights: RewardWeights,
    pub reward_params: RewardParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            road: RoadConfig::default(),
            traffic_count: 6,
            horizon: 40,
            ghr: GhrParams::default(),
            reward_weights: RewardWeights::default(),
            reward_params: RewardParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn with_scenario(scenario: Scenario) -> Self {
        let mut cfg = Self::default();
        cfg.road.scenario = scenario;
        cfg
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.road.validate()?;
        if self.horizon == 0 {
            return Err(EnvError::InvalidConfig("horizon must be >= 1".into()));
        }
        self.ghr.validate().map_err(EnvError::InvalidConfig)?;
        self.reward_weights
            .validate()
            .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        self.reward_params
            .validate()
            .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub ego_speed: f64,
    pub ego_lane: usize,
    pub crashed: bool,
    pub off_road: bool,
    pub sim_time: f64,
    /// Simulation time at which a collision or off-road event first occurred
    /// during this decision period.
    pub fault_onset: Option<f64>,
    /// Whether the action changed the ego lane target.
    pub lane_change_initiated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    /// Collision or off-road.
    pub terminated: bool,
    /// Time limit or end of road.
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NotReset,
    Running,
    Finished,
}

#[derive(Debug, Clone)]
pub struct HighwayEnv {
    config: EnvConfig,
    ego: VehicleState,
    ego_target_speed: f64,
    ego_lateral_speed: f64,
    traffic: Vec<VehicleState>,
    traffic_target_speed: Vec<f64>,
    traffic_pending: Vec<VecDeque<f64>>,
    delay_substeps: usize,
    steps: usize,
    substeps: u64,
    off_road: bool,
    phase: Phase,
}

impl HighwayEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let delay_substeps = (config.ghr.tau / DT).round() as usize;
        Ok(Self {
            config,
            ego: VehicleState::new(0.0, 0.0, EGO_INITIAL_SPEED, 0),
            ego_target_speed: EGO_INITIAL_SPEED,
            ego_lateral_speed: 0.0,
            traffic: Vec::new(),
            traffic_target_speed: Vec::new(),
            traffic_pending: Vec::new(),
            delay_substeps,
            steps: 0,
            substeps: 0,
            off_road: false,
            phase: Phase::NotReset,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn road(&self) -> &RoadConfig {
        &self.config.road
    }

    /// Replace the road geometry; takes effect at the next reset.
    pub fn set_road(&mut self, road: RoadConfig) -> Result<(), EnvError> {
        road.validate()?;
        self.config.road = road;
        self.phase = Phase::NotReset;
        Ok(())
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn ego_target_speed(&self) -> f64 {
        self.ego_target_speed
    }

    pub fn ego_lateral_speed(&self) -> f64 {
        self.ego_lateral_speed
    }

    pub fn traffic(&self) -> &[VehicleState] {
        &self.traffic
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sim_time(&self) -> f64 {
        self.substeps as f64 * DT
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn ego_lane(&self) -> usize {
        self.config.road.lane_of(self.ego.y)
    }

    /// Spawn the ego at `x = 0` in a seeded lane and the traffic at seeded,
    /// non-overlapping positions. Identical seeds give identical states.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let road = self.config.road;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let ego_lane = rng.gen_range(0..road.lane_count);
        self.ego = VehicleState::new(0.0, road.lane_center(ego_lane), EGO_INITIAL_SPEED, ego_lane);
        self.ego_target_speed = EGO_INITIAL_SPEED;
        self.ego_lateral_speed = 0.0;

        // Traffic never changes lanes, so none is placed on the dead-end ramp.
        let traffic_lanes: Vec<usize> = (0..road.lane_count)
            .filter(|&l| Some(l) != road.ramp_lane())
            .collect();

        let mut placed: Vec<(usize, f64)> = vec![(ego_lane, 0.0)];
        self.traffic.clear();
        self.traffic_target_speed.clear();
        for _ in 0..self.config.traffic_count {
            let mut spot = None;
            for _ in 0..SPAWN_ATTEMPTS {
                let lane = traffic_lanes[rng.gen_range(0..traffic_lanes.len())];
                let x = rng.gen_range(SPAWN_X_MIN..SPAWN_X_MAX);
                let clear = placed
                    .iter()
                    .all(|&(l, px)| l != lane || (px - x).abs() >= SPAWN_MIN_SPACING);
                if clear {
                    spot = Some((lane, x));
                    break;
                }
            }
            let (lane, x) = spot.ok_or(EnvError::SpawnFailed(self.config.traffic_count))?;
            let v = rng.gen_range(TRAFFIC_SPEED_MIN..TRAFFIC_SPEED_MAX);
            placed.push((lane, x));
            self.traffic
                .push(VehicleState::new(x, road.lane_center(lane), v, lane));
            self.traffic_target_speed.push(v);
        }
        self.traffic_pending = (0..self.traffic.len())
            .map(|_| VecDeque::from(vec![0.0; self.delay_substeps]))
            .collect();

        self.steps = 0;
        self.substeps = 0;
        self.off_road = false;
        self.phase = Phase::Running;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        let lateral = vec![0.0; self.traffic.len()];
        encode_observation(&self.ego, self.ego_lateral_speed, &self.traffic, &lateral)
    }

    /// Nearest vehicle ahead of `x` whose center is within half a lane of `y`.
    fn leader_of(&self, subject: Option<usize>, x: f64, y: f64) -> Option<&VehicleState> {
        let window = 0.5 * self.config.road.lane_width;
        let ego_candidate = subject.map(|_| &self.ego);
        self.traffic
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != subject)
            .map(|(_, v)| v)
            .chain(ego_candidate)
            .filter(|v| v.x > x && (v.y - y).abs() < window)
            .min_by(|a, b| a.x.total_cmp(&b.x))
    }

    /// Bumper gap to the leader in the ego's lane, if any.
    pub fn ego_leader_gap(&self) -> Option<f64> {
        self.leader_of(None, self.ego.x, self.ego.y)
            .map(|leader| bumper_gap(&self.ego, leader))
    }

    fn ramp_forces_stop(&self, vehicle: &VehicleState) -> bool {
        match self.config.road.ramp_lane() {
            Some(ramp) => {
                vehicle.lane_target == ramp && vehicle.x >= self.config.road.merge_ramp_end_x
            }
            None => false,
        }
    }

    fn ego_is_off_road(&self) -> bool {
        let road = &self.config.road;
        let (lo, hi) = road.lateral_bounds();
        if self.ego.y < lo || self.ego.y > hi {
            return true;
        }
        match road.ramp_lane() {
            Some(ramp) => {
                road.lane_of(self.ego.y) == ramp
                    && self.ego.x >= road.merge_ramp_end_x + RAMP_RUNOUT
            }
            None => false,
        }
    }

    fn apply_action(&mut self, action: EgoAction) -> bool {
        if self.ego.crashed {
            return false;
        }
        let last_lane = self.config.road.lane_count - 1;
        match action {
            EgoAction::Faster => {
                self.ego_target_speed =
                    (self.ego_target_speed + TARGET_SPEED_STEP).min(TARGET_SPEED_MAX);
                false
            }
            EgoAction::Slower => {
                self.ego_target_speed =
                    (self.ego_target_speed - TARGET_SPEED_STEP).max(TARGET_SPEED_MIN);
                false
            }
            EgoAction::Idle => false,
            EgoAction::LaneLeft if self.ego.lane_target > 0 => {
                self.ego.lane_target -= 1;
                true
            }
            EgoAction::LaneRight if self.ego.lane_target < last_lane => {
                self.ego.lane_target += 1;
                true
            }
            EgoAction::LaneLeft | EgoAction::LaneRight => false,
        }
    }

    /// One Euler sub-step; returns the ego's effective acceleration.
    fn substep(&mut self) -> f64 {
        let ego_cmd = if self.ego.crashed || self.ramp_forces_stop(&self.ego) {
            -ACCEL_LIMIT
        } else {
            speed_tracking(self.ego.v, self.ego_target_speed)
        };

        let mut traffic_cmd = Vec::with_capacity(self.traffic.len());
        for i in 0..self.traffic.len() {
            let vehicle = &self.traffic[i];
            let cmd = if vehicle.crashed || self.ramp_forces_stop(vehicle) {
                -ACCEL_LIMIT
            } else {
                let leader = self.leader_of(Some(i), vehicle.x, vehicle.y);
                ghr_acceleration(vehicle, leader, self.traffic_target_speed[i], &self.config.ghr)
            };
            traffic_cmd.push(cmd);
        }
        if self.delay_substeps > 0 {
            for (cmd, queue) in traffic_cmd.iter_mut().zip(self.traffic_pending.iter_mut()) {
                queue.push_back(*cmd);
                *cmd = queue.pop_front().unwrap_or(0.0);
            }
        }

        let road = self.config.road;
        let ego_accel = integrate(&mut self.ego, ego_cmd);
        self.ego_lateral_speed = if self.ego.crashed {
            0.0
        } else {
            slew(&mut self.ego, &road)
        };
        for (vehicle, cmd) in self.traffic.iter_mut().zip(traffic_cmd) {
            integrate(vehicle, cmd);
            if !vehicle.crashed {
                slew(vehicle, &road);
            }
        }

        // Same pairwise test as `collision_check`, without building a joint slice.
        let n = self.traffic.len();
        let mut hits = vec![false; n];
        for i in 0..n {
            if boxes_overlap(&self.ego, &self.traffic[i]) {
                self.ego.crashed = true;
                hits[i] = true;
            }
            for j in (i + 1)..n {
                if boxes_overlap(&self.traffic[i], &self.traffic[j]) {
                    hits[i] = true;
                    hits[j] = true;
                }
            }
        }
        for (vehicle, hit) in self.traffic.iter_mut().zip(hits) {
            vehicle.crashed |= hit;
        }
        self.off_road |= self.ego_is_off_road();
        self.substeps += 1;
        ego_accel
    }

    pub fn step(&mut self, action: EgoAction) -> Result<StepOutcome, EnvError> {
        match self.phase {
            Phase::NotReset => return Err(EnvError::NotReset),
            Phase::Finished => return Err(EnvError::EpisodeFinished),
            Phase::Running => {}
        }
        let lane_change_initiated = self.apply_action(action);

        let mut abs_accel_sum = 0.0;
        let mut fault_onset = None;
        for _ in 0..SUBSTEPS {
            abs_accel_sum += self.substep().abs();
            if fault_onset.is_none() && (self.ego.crashed || self.off_road) {
                fault_onset = Some(self.sim_time());
            }
        }
        self.steps += 1;

        let period = PeriodSummary {
            crashed: self.ego.crashed,
            leader_gap: self.ego_leader_gap().map(|g| g.max(f64::MIN_POSITIVE)),
            ego_speed: self.ego.v,
            mean_abs_accel: abs_accel_sum / SUBSTEPS as f64,
            lane_change_initiated,
        };
        let reward = compute_reward(
            &period,
            &self.config.reward_weights,
            &self.config.reward_params,
        );

        let terminated = self.ego.crashed || self.off_road;
        let truncated = !terminated
            && (self.steps >= self.config.horizon || self.ego.x >= self.config.road.road_length);
        if terminated || truncated {
            self.phase = Phase::Finished;
        }

        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            terminated,
            truncated,
            info: StepInfo {
                ego_speed: self.ego.v,
                ego_lane: self.ego_lane(),
                crashed: self.ego.crashed,
                off_road: self.off_road,
                sim_time: self.sim_time(),
                fault_onset,
                lane_change_initiated,
            },
        })
    }
}

/// Longitudinal Euler update; returns the effective acceleration after the
/// speed bounds are applied.
fn integrate(vehicle: &mut VehicleState, cmd: f64) -> f64 {
    let cmd = if vehicle.v <= 0.0 && cmd < 0.0 { 0.0 } else { cmd };
    vehicle.a = cmd.clamp(-ACCEL_LIMIT, ACCEL_LIMIT);
    vehicle.x += vehicle.v * DT;
    let v_next = (vehicle.v + vehicle.a * DT).clamp(0.0, MAX_SPEED);
    let effective = (v_next - vehicle.v) / DT;
    vehicle.v = v_next;
    effective
}

/// Move laterally toward the target lane center at the slew rate; returns
/// the lateral speed over the sub-step.
fn slew(vehicle: &mut VehicleState, road: &RoadConfig) -> f64 {
    let target = road.lane_center(vehicle.lane_target);
    let max_step = LATERAL_RATE * DT;
    let delta = target - vehicle.y;
    // the tolerance absorbs rounding in the accumulated steps
    if delta.abs() <= max_step + 1e-9 {
        vehicle.y = target;
        delta / DT
    } else {
        let step = max_step.copysign(delta);
        vehicle.y += step;
        step / DT
    }
}
