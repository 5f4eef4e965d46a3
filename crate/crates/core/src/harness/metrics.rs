use std::collections::VecDeque;

use crate::driver::DriverStep;

/// Shortest decimal text that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // fold -0 into 0 so equal values print identically
        "0".to_string()
    } else if (1e-5..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Mean and sample standard deviation (`n - 1` divisor; 0 for a single
/// value). Empty input gives `(0, 0)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Mean and sample standard deviation over the last `window` values.
#[derive(Debug, Clone)]
pub struct MovingStats {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingStats {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            values: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, value: f64) -> (f64, f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(value);
        // recomputed from scratch so the result depends only on the window
        mean_std(self.values.make_contiguous())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Global step at which the episode ended.
    pub global_step: u64,
    pub episode_return: f64,
    pub length: usize,
    pub collided: bool,
    pub off_road: bool,
    pub mean_speed: f64,
    pub lane_changes: usize,
}

/// Accumulates one episode at a time from driver steps.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTracker {
    ret: f64,
    length: usize,
    speed_sum: f64,
    lane_changes: usize,
}

impl EpisodeTracker {
    /// Record a step; returns the finished episode's metrics when it ends.
    pub fn record(&mut self, step: &DriverStep, global_step: u64) -> Option<EpisodeMetrics> {
        let out = &step.outcome;
        self.ret += out.reward.total;
        self.length += 1;
        self.speed_sum += out.info.ego_speed;
        if out.info.lane_change_initiated {
            self.lane_changes += 1;
        }
        if !out.done() {
            return None;
        }
        let metrics = EpisodeMetrics {
            episode: step.episode,
            global_step,
            episode_return: self.ret,
            length: self.length,
            collided: out.info.crashed,
            off_road: out.info.off_road,
            mean_speed: self.speed_sum / self.length as f64,
            lane_changes: self.lane_changes,
        };
        *self = Self::default();
        Some(metrics)
    }
}

/// Cumulative collision / off-road counts and open time.
///
/// A fault opens at the first collision or off-road instant of an episode
/// and stays open until the episode ends, which is the end of the same
/// decision period since both events terminate the episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FaultLog {
    pub faults_cum: u64,
    pub fault_duration_cum_s: f64,
}

impl FaultLog {
    pub fn record(&mut self, step: &DriverStep) {
        let info = &step.outcome.info;
        if let Some(onset) = info.fault_onset {
            self.faults_cum += 1;
            self.fault_duration_cum_s += (info.sim_time - onset).max(0.0);
        }
    }
}

pub const METRICS_HEADER: [&str; 10] = [
    "episode",
    "global_step",
    "return",
    "length",
    "collided",
    "off_road",
    "return_mean_100",
    "return_std_100",
    "faults_cum",
    "fault_duration_cum_s",
];

pub const FAULTS_HEADER: [&str; 3] = ["global_step", "faults_cum", "fault_duration_cum_s"];

pub const EVAL_CURVE_HEADER: [&str; 7] = [
    "global_step",
    "episodes",
    "return_mean",
    "return_std",
    "collision_rate",
    "off_road_rate",
    "mean_speed",
];

pub const EVAL_EPISODES_HEADER: [&str; 8] = [
    "episode",
    "seed",
    "return",
    "length",
    "collided",
    "off_road",
    "mean_speed",
    "lane_changes",
];

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "t",
    "x",
    "y",
    "lane",
    "v",
    "action",
    "safety",
    "comfort",
    "efficiency",
    "total",
];

pub const COMPARE_HEADER: [&str; 8] = [
    "agent",
    "episodes",
    "return_mean",
    "return_std",
    "collision_rate",
    "off_road_rate",
    "mean_speed",
    "faults",
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_std_conventions() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[3.5]), (3.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, -0.0, f64::MAX] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back, if x == 0.0 { 0.0 } else { x });
        }
    }

    proptest! {
        #[test]
        fn moving_stats_match_window_recomputation(values in prop::collection::vec(-50.0f64..50.0, 1..300)) {
            let mut ms = MovingStats::new(100);
            for (i, &v) in values.iter().enumerate() {
                let (m, s) = ms.push(v);
                let lo = (i + 1).saturating_sub(100);
                let window = &values[lo..=i];
                let n = window.len() as f64;
                let mean = window.iter().sum::<f64>() / n;
                let std = if window.len() < 2 {
                    0.0
                } else {
                    (window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                };
                prop_assert!((m - mean).abs() < 1e-9);
                prop_assert!((s - std).abs() < 1e-9);
            }
        }
    }
}
