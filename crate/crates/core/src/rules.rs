//! Finite-state-machine driving baseline.
//!
//! The machine reads only the observation matrix plus the road geometry:
//!
//! ```text
//! CruiseFollow --(short headway, candidate lane)--> PrepareLaneChange
//! PrepareLaneChange --(gaps and speed ok)--> ExecuteLaneChange
//! PrepareLaneChange --(otherwise)--> CruiseFollow
//! ExecuteLaneChange --(settled in target lane)--> CruiseFollow
//! ```
//!
//! On the merge ramp the ego always looks for a gap to the left, since the
//! ramp ends; the speed-advantage test is waived there.

use serde::{Deserialize, Serialize};

use crate::env::{EgoAction, Observation, RoadConfig, VEHICLE_LENGTH, V_RANGE, X_RANGE, Y_RANGE};

/// Distance from the lane center below which a lane change counts as done.
pub const SETTLE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmState {
    CruiseFollow,
    PrepareLaneChange,
    ExecuteLaneChange { target_lane: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleParams {
    /// Leader time headway (s) below which a lane change is considered.
    pub headway_change_trigger: f64,
    /// Minimum bumper gap (m) to the new leader in the target lane.
    pub gap_accept_front: f64,
    /// Minimum bumper gap (m) to the new follower in the target lane.
    pub gap_accept_rear: f64,
    /// Required speed margin (m/s) of the target-lane leader over the
    /// current leader.
    pub speed_advantage_min: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            headway_change_trigger: 2.0,
            gap_accept_front: 15.0,
            gap_accept_rear: 10.0,
            speed_advantage_min: 2.0,
        }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("headway_change_trigger", self.headway_change_trigger),
            ("gap_accept_front", self.gap_accept_front),
            ("gap_accept_rear", self.gap_accept_rear),
            ("speed_advantage_min", self.speed_advantage_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be > 0 (got {v})"));
            }
        }
        Ok(())
    }
}

/// Surroundings of one lane, decoded from the observation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct LaneView {
    /// Bumper gap and relative speed of the nearest vehicle ahead.
    front: Option<(f64, f64)>,
    /// Bumper gap of the nearest vehicle behind.
    rear_gap: Option<f64>,
}

struct Scene {
    y: f64,
    speed: f64,
    lane: usize,
}

fn decode_ego(obs: &Observation, road: &RoadConfig) -> Scene {
    let ego = obs.ego_row();
    let y = ego[2] * Y_RANGE;
    Scene {
        y,
        speed: ego[3] * V_RANGE,
        lane: road.lane_of(y),
    }
}

fn lane_view(obs: &Observation, road: &RoadConfig, scene: &Scene, lane: usize) -> LaneView {
    let mut view = LaneView::default();
    let half = 0.5 * road.lane_width;
    for row in obs.neighbor_rows() {
        if row[0] == 0.0 {
            continue;
        }
        let other_y = scene.y + row[2] * Y_RANGE;
        if (other_y - road.lane_center(lane)).abs() >= half {
            continue;
        }
        let dx = row[1] * X_RANGE;
        let gap = dx.abs() - VEHICLE_LENGTH;
        if dx > 0.0 {
            if view.front.is_none_or(|(g, _)| gap < g) {
                view.front = Some((gap, row[3] * V_RANGE));
            }
        } else if view.rear_gap.is_none_or(|g| gap < g) {
            view.rear_gap = Some(gap);
        }
    }
    view
}

fn headway(view: &LaneView, speed: f64) -> Option<f64> {
    view.front.map(|(gap, _)| gap / speed.max(0.1))
}

/// Adjacent lanes the ego may move into, left first. The ramp is never a
/// destination.
fn candidate_lanes(road: &RoadConfig, lane: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if lane > 0 {
        out.push(lane - 1);
    }
    if lane + 1 < road.lane_count && Some(lane + 1) != road.ramp_lane() {
        out.push(lane + 1);
    }
    out
}

fn cruise_action(hw: Option<f64>, p: &RuleParams) -> EgoAction {
    match hw {
        Some(h) if h < 0.5 * p.headway_change_trigger => EgoAction::Slower,
        Some(h) if h < p.headway_change_trigger => EgoAction::Idle,
        _ => EgoAction::Faster,
    }
}

fn gap_acceptable(view: &LaneView, p: &RuleParams) -> bool {
    view.front.is_none_or(|(g, _)| g >= p.gap_accept_front) && view.rear_gap.is_none_or(|g| g >= p.gap_accept_rear)
}

fn speed_advantage(current: &LaneView, target: &LaneView, p: &RuleParams) -> bool {
    match (target.front, current.front) {
        (None, _) => true,
        // no current leader means nothing to overtake
        (Some(_), None) => false,
        (Some((_, dv_target)), Some((_, dv_current))) => dv_target - dv_current >= p.speed_advantage_min,
    }
}

/// One FSM step: the action to take now and the next state. At most one
/// state transition happens per call.
pub fn decide(obs: &Observation, state: FsmState, params: &RuleParams, road: &RoadConfig) -> (EgoAction, FsmState) {
    let scene = decode_ego(obs, road);
    let on_ramp = road.ramp_lane() == Some(scene.lane);
    let current = lane_view(obs, road, &scene, scene.lane);
    let hw = headway(&current, scene.speed);
    let cruise = cruise_action(hw, params);
    match state {
        FsmState::CruiseFollow => {
            let crowded = hw.is_some_and(|h| h < params.headway_change_trigger);
            if (crowded || on_ramp) && !candidate_lanes(road, scene.lane).is_empty() {
                (cruise, FsmState::PrepareLaneChange)
            } else {
                (cruise, FsmState::CruiseFollow)
            }
        }
        FsmState::PrepareLaneChange => {
            for target in candidate_lanes(road, scene.lane) {
                let view = lane_view(obs, road, &scene, target);
                if gap_acceptable(&view, params) && (on_ramp || speed_advantage(&current, &view, params)) {
                    let action = if target < scene.lane {
                        EgoAction::LaneLeft
                    } else {
                        EgoAction::LaneRight
                    };
                    return (action, FsmState::ExecuteLaneChange { target_lane: target });
                }
            }
            (EgoAction::Slower, FsmState::CruiseFollow)
        }
        FsmState::ExecuteLaneChange { target_lane } => {
            if (scene.y - road.lane_center(target_lane)).abs() < SETTLE_TOLERANCE {
                (EgoAction::Idle, FsmState::CruiseFollow)
            } else {
                (EgoAction::Idle, state)
            }
        }
    }
}

/// Stateful wrapper for episode loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleAgent {
    pub params: RuleParams,
    pub road: RoadConfig,
    pub state: FsmState,
}

impl RuleAgent {
    pub fn new(params: RuleParams, road: RoadConfig) -> Self {
        Self {
            params,
            road,
            state: FsmState::CruiseFollow,
        }
    }

    pub fn reset(&mut self) {
        self.state = FsmState::CruiseFollow;
    }

    pub fn act(&mut self, obs: &Observation) -> EgoAction {
        let (action, next) = decide(obs, self.state, &self.params, &self.road);
        self.state = next;
        action
    }
}

/// Whether `to` is reachable from `from` in one call.
pub fn is_defined_edge(from: FsmState, to: FsmState) -> bool {
    use FsmState::*;
    matches!(
        (from, to),
        (CruiseFollow, CruiseFollow)
            | (CruiseFollow, PrepareLaneChange)
            | (PrepareLaneChange, CruiseFollow)
            | (PrepareLaneChange, ExecuteLaneChange { .. })
            | (ExecuteLaneChange { .. }, ExecuteLaneChange { .. })
            | (ExecuteLaneChange { .. }, CruiseFollow)
    )
}
