//! Ego-relative kinematics matrix.
//!
//! Row 0 describes the ego vehicle: `[1, 0, y / Y, vx / V, vy / V]` with `y`
//! measured from the center of lane 0. Rows 1..=4 hold the four traffic
//! vehicles nearest in `|x - x_ego|` as
//! `[1, dx / X, dy / Y, dvx / V, dvy / V]`, absent rows are all zero.
//! X = 100 m, Y = 12 m, V = 30 m/s; every entry is clamped to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use super::VehicleState;

pub const NEIGHBOR_COUNT: usize = 4;
pub const FEATURE_COUNT: usize = 5;
pub const OBS_ROWS: usize = NEIGHBOR_COUNT + 1;
pub const OBS_DIM: usize = OBS_ROWS * FEATURE_COUNT;

pub const X_RANGE: f64 = 100.0;
pub const Y_RANGE: f64 = 12.0;
pub const V_RANGE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rows: [[f64; FEATURE_COUNT]; OBS_ROWS],
}

impl Default for Observation {
    fn default() -> Self {
        Self {
            rows: [[0.0; FEATURE_COUNT]; OBS_ROWS],
        }
    }
}

impl Observation {
    /// Row-major flat view, length [`OBS_DIM`].
    pub fn as_slice(&self) -> &[f64] {
        self.rows.as_flattened()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != OBS_DIM {
            return None;
        }
        let mut obs = Self::default();
        obs.rows.as_flattened_mut().copy_from_slice(values);
        Some(obs)
    }

    pub fn ego_row(&self) -> &[f64; FEATURE_COUNT] {
        &self.rows[0]
    }

    pub fn neighbor_rows(&self) -> &[[f64; FEATURE_COUNT]] {
        &self.rows[1..]
    }
}

#[inline]
fn norm(value: f64, range: f64) -> f64 {
    (value / range).clamp(-1.0, 1.0)
}

/// Indices of up to `k` vehicles with the smallest `|x - ego_x|`, nearest
/// first, ties broken by the lower index.
pub fn nearest_indices(ego_x: f64, traffic: &[VehicleState], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..traffic.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (traffic[a].x - ego_x).abs();
        let db = (traffic[b].x - ego_x).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub fn encode_observation(
    ego: &VehicleState,
    ego_lateral_speed: f64,
    traffic: &[VehicleState],
    traffic_lateral_speed: &[f64],
) -> Observation {
    let mut obs = Observation::default();
    obs.rows[0] = [
        1.0,
        0.0,
        norm(ego.y, Y_RANGE),
        norm(ego.v, V_RANGE),
        norm(ego_lateral_speed, V_RANGE),
    ];
    for (row, idx) in nearest_indices(ego.x, traffic, NEIGHBOR_COUNT)
        .into_iter()
        .enumerate()
    {
        let other = &traffic[idx];
        let other_vy = traffic_lateral_speed.get(idx).copied().unwrap_or(0.0);
        obs.rows[row + 1] = [
            1.0,
            norm(other.x - ego.x, X_RANGE),
            norm(other.y - ego.y, Y_RANGE),
            norm(other.v - ego.v, V_RANGE),
            norm(other_vy - ego_lateral_speed, V_RANGE),
        ];
    }
    obs
}
