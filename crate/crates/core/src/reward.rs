//! Weighted three-term driving reward: safety, comfort and efficiency.
//!
//! Every component has a bounded closed form so it can be tested in
//! isolation:
//!
//! | term       | closed form                                              | range     |
//! |------------|----------------------------------------------------------|-----------|
//! | safety     | `-1` if crashed, else `-0.5 * max(0, 1 - tau_h / tau_safe)` | `[-1, 0]` |
//! | comfort    | `-(mean|a| / a_max)^2 - kappa * [lane change started]`   | `[-2, 0]` |
//! | efficiency | `clamp((v - v_min) / (v_max - v_min), 0, 1)`             | `[0, 1]`  |
//!
//! The total is always evaluated by [`RewardWeights::combine`] so the stored
//! decomposition and the total agree bitwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest speed used when converting a gap into a time headway.
const MIN_HEADWAY_SPEED: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("reward weight `{name}` must be finite and >= 0 (got {value})")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("at least one reward weight must be > 0")]
    AllWeightsZero,
    #[error("invalid reward parameter: {0}")]
    InvalidParam(String),
}

/// Balancing weights for the three reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            safety: 1.0,
            comfort: 0.3,
            efficiency: 0.7,
        }
    }
}

impl RewardWeights {
    pub fn new(safety: f64, comfort: f64, efficiency: f64) -> Result<Self, RewardError> {
        let w = Self {
            safety,
            comfort,
            efficiency,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, value) in [
            ("safety", self.safety),
            ("comfort", self.comfort),
            ("efficiency", self.efficiency),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(RewardError::NegativeWeight { name, value });
            }
        }
        if self.safety == 0.0 && self.comfort == 0.0 && self.efficiency == 0.0 {
            return Err(RewardError::AllWeightsZero);
        }
        Ok(())
    }

    /// The single place where the weighted sum is evaluated.
    #[inline]
    pub fn combine(&self, safety: f64, comfort: f64, efficiency: f64) -> f64 {
        self.safety * safety + self.comfort * comfort + self.efficiency * efficiency
    }

    /// Lower and upper bound of the total over all admissible inputs.
    pub fn total_range(&self) -> (f64, f64) {
        (-(self.safety + 2.0 * self.comfort), self.efficiency)
    }
}

/// Thresholds shared by the component closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Safe time headway in seconds.
    pub tau_safe: f64,
    pub a_max: f64,
    pub kappa_lane_change: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            tau_safe: 1.5,
            a_max: 5.0,
            kappa_lane_change: 0.1,
            v_min: 20.0,
            v_max: 30.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.tau_safe > 0.0 && self.tau_safe.is_finite()) {
            return Err(RewardError::InvalidParam(format!(
                "tau_safe must be > 0 (got {})",
                self.tau_safe
            )));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(RewardError::InvalidParam(format!(
                "a_max must be > 0 (got {})",
                self.a_max
            )));
        }
        // kappa outside [0, 1] would break the declared comfort range.
        if !(0.0..=1.0).contains(&self.kappa_lane_change) {
            return Err(RewardError::InvalidParam(format!(
                "kappa_lane_change must lie in [0, 1] (got {})",
                self.kappa_lane_change
            )));
        }
        if !(self.v_min > 0.0 && self.v_max > self.v_min && self.v_max.is_finite()) {
            return Err(RewardError::InvalidParam(format!(
                "need v_max > v_min > 0 (got v_min={}, v_max={})",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }
}

/// Per-step reward with its components kept alongside the total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_components(
        weights: &RewardWeights,
        safety: f64,
        comfort: f64,
        efficiency: f64,
    ) -> Self {
        Self {
            safety,
            comfort,
            efficiency,
            total: weights.combine(safety, comfort, efficiency),
        }
    }
}

/// Safety penalty from collision state and time headway to the leader.
///
/// `gap` is the bumper-to-bumper distance to the leader in the ego lane, if
/// there is one.
pub fn safety_term(crashed: bool, gap: Option<f64>, ego_speed: f64, p: &RewardParams) -> f64 {
    if crashed {
        return -1.0;
    }
    match gap {
        None => 0.0,
        Some(gap) => {
            let headway = gap.max(0.0) / ego_speed.max(MIN_HEADWAY_SPEED);
            -0.5 * (1.0 - headway / p.tau_safe).max(0.0)
        }
    }
}

/// Comfort penalty from mean absolute longitudinal acceleration over the
/// decision period and whether a lane change was started.
pub fn comfort_term(mean_abs_accel: f64, lane_change_initiated: bool, p: &RewardParams) -> f64 {
    let ratio = (mean_abs_accel / p.a_max).min(1.0);
    let lane = if lane_change_initiated {
        p.kappa_lane_change
    } else {
        0.0
    };
    -(ratio * ratio) - lane
}

pub fn efficiency_term(ego_speed: f64, p: &RewardParams) -> f64 {
    ((ego_speed - p.v_min) / (p.v_max - p.v_min)).clamp(0.0, 1.0)
}

/// Summary of one decision period, as seen by the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSummary {
    pub crashed: bool,
    /// Bumper gap to the leader in the ego lane at the end of the period.
    pub leader_gap: Option<f64>,
    /// Ego speed at the end of the period.
    pub ego_speed: f64,
    /// Mean of |a| over the sub-steps of the period.
    pub mean_abs_accel: f64,
    pub lane_change_initiated: bool,
}

pub fn compute_reward(
    period: &PeriodSummary,
    weights: &RewardWeights,
    params: &RewardParams,
) -> RewardBreakdown {
    let safety = safety_term(period.crashed, period.leader_gap, period.ego_speed, params);
    let comfort = comfort_term(period.mean_abs_accel, period.lane_change_initiated, params);
    let efficiency = efficiency_term(period.ego_speed, params);
    RewardBreakdown::from_components(weights, safety, comfort, efficiency)
}
