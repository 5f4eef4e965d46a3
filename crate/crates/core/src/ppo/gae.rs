/// Per-step series needed by the advantage recursion.
#[derive(Debug, Clone, Copy)]
pub struct GaeInput<'a> {
    pub rewards: &'a [f64],
    /// `V(s_t)`.
    pub values: &'a [f64],
    /// Terminated at `t`: the successor value is zero.
    pub dones: &'a [bool],
    /// Last step of an episode segment (terminated, truncated, or the end of
    /// the rollout).
    pub boundaries: &'a [bool],
    /// `V(s_{t+1})` used at boundaries that are not terminations.
    pub bootstrap_values: &'a [f64],
}

/// Backward recursion `A_t = delta_t + gamma * lambda * A_{t+1}` with
/// `delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)`, restarted at every
/// boundary. Returns `(advantages, value_targets)` with
/// `value_targets = advantages + values`.
pub fn compute_gae(input: GaeInput<'_>, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = input.rewards.len();
    assert!(
        input.values.len() == n
            && input.dones.len() == n
            && input.boundaries.len() == n
            && input.bootstrap_values.len() == n,
        "GAE series must have equal length"
    );
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let last = input.boundaries[t] || input.dones[t] || t + 1 == n;
        let next_value = if input.dones[t] {
            0.0
        } else if last {
            input.bootstrap_values[t]
        } else {
            input.values[t + 1]
        };
        if last {
            next_adv = 0.0;
        }
        let delta = input.rewards[t] + gamma * next_value - input.values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
    }
    let targets = advantages
        .iter()
        .zip(input.values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, targets)
}

/// Shift to mean 0 and scale to (population) standard deviation 1, with
/// `1e-8` added to the divisor.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let scale = var.sqrt() + 1e-8;
    for a in advantages.iter_mut() {
        *a = (*a - mean) / scale;
    }
}
