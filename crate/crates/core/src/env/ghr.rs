//! Gazis-Herman-Rothery stimulus-response car following.
//!
//! `a = c * v_f^m * (v_leader - v_follower) / gap^l`, clamped to the
//! vehicle acceleration limit.

use serde::{Deserialize, Serialize};

use super::{VehicleState, ACCEL_LIMIT, SPEED_GAIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhrParams {
    /// Sensitivity gain.
    pub c: f64,
    /// Speed exponent.
    pub m: f64,
    /// Spacing exponent.
    pub l: f64,
    /// Reaction delay in seconds.
    pub tau: f64,
}

impl Default for GhrParams {
    fn default() -> Self {
        Self {
            c: 15.0,
            m: 0.0,
            l: 2.0,
            tau: 0.0,
        }
    }
}

impl GhrParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(format!("ghr.c must be > 0 (got {})", self.c));
        }
        if !self.m.is_finite() {
            return Err(format!("ghr.m must be finite (got {})", self.m));
        }
        if !(self.l >= 0.0 && self.l.is_finite()) {
            return Err(format!("ghr.l must be >= 0 (got {})", self.l));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(format!("ghr.tau must be >= 0 (got {})", self.tau));
        }
        Ok(())
    }
}

/// Bumper-to-bumper gap from `follower` to `leader`.
pub fn bumper_gap(follower: &VehicleState, leader: &VehicleState) -> f64 {
    leader.x - follower.x - 0.5 * (leader.length + follower.length)
}

/// Raw GHR stimulus response for a positive gap, before clamping.
#[inline]
pub fn ghr_response(follower_speed: f64, leader_speed: f64, gap: f64, p: &GhrParams) -> f64 {
    p.c * follower_speed.powf(p.m) * (leader_speed - follower_speed) / gap.powf(p.l)
}

/// Proportional tracking of a target speed, clamped to the acceleration limit.
#[inline]
pub fn speed_tracking(speed: f64, target_speed: f64) -> f64 {
    (SPEED_GAIN * (target_speed - speed)).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

/// Longitudinal acceleration command for a GHR-controlled vehicle.
///
/// Without a leader the vehicle tracks its own `target_speed`. A
/// non-positive gap means the boxes already overlap and the vehicle brakes
/// at the limit.
pub fn ghr_acceleration(
    follower: &VehicleState,
    leader: Option<&VehicleState>,
    target_speed: f64,
    p: &GhrParams,
) -> f64 {
    let Some(leader) = leader else {
        return speed_tracking(follower.v, target_speed);
    };
    let gap = bumper_gap(follower, leader);
    if gap <= 0.0 {
        return -ACCEL_LIMIT;
    }
    ghr_response(follower.v, leader.v, gap, p).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car(x: f64, v: f64) -> VehicleState {
        VehicleState::new(x, 0.0, v, 0)
    }

    #[test]
    fn zero_stimulus() {
        let p = GhrParams::default();
        assert_eq!(ghr_acceleration(&car(0.0, 20.0), Some(&car(30.0, 20.0)), 25.0, &p), 0.0);
    }

    #[test]
    fn direct_arithmetic() {
        let p = GhrParams::default();
        // 10 m bumper gap with 5 m cars: centers 15 m apart
        let a = ghr_acceleration(&car(0.0, 20.0), Some(&car(15.0, 22.0)), 25.0, &p);
        assert!((a - 0.3).abs() < 1e-12, "{a}");
    }

    #[test]
    fn overlap_brakes_hard() {
        let p = GhrParams::default();
        assert_eq!(
            ghr_acceleration(&car(0.0, 20.0), Some(&car(4.0, 30.0)), 25.0, &p),
            -ACCEL_LIMIT
        );
    }

    #[test]
    fn no_leader_tracks_target() {
        let p = GhrParams::default();
        assert_eq!(ghr_acceleration(&car(0.0, 20.0), None, 22.0, &p), 2.0);
        assert_eq!(ghr_acceleration(&car(0.0, 20.0), None, 40.0, &p), ACCEL_LIMIT);
    }

    #[test]
    fn grid_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = GhrParams {
                c: rng.gen_range(1.0..30.0),
                m: rng.gen_range(-1.0..1.5),
                l: rng.gen_range(0.0..3.0),
                tau: 0.0,
            };
            let vf: f64 = rng.gen_range(1.0..35.0);
            let vl: f64 = rng.gen_range(1.0..35.0);
            let dx: f64 = rng.gen_range(0.5..120.0);
            let follower = car(0.0, vf);
            let leader = car(dx + 5.0, vl);
            let oracle = (p.c * vf.powf(p.m) * (vl - vf) * dx.powf(-p.l)).clamp(-5.0, 5.0);
            let got = ghr_acceleration(&follower, Some(&leader), 25.0, &p);
            assert!(
                (got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
                "got {got} oracle {oracle}"
            );
        }
    }
}
