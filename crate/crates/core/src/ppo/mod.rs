//! Proximal policy optimization with a clipped surrogate objective and
//! generalized advantage estimation.
//!
//! Policy and value functions are separate MLPs, each with its own Adam
//! optimizer.

mod gae;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointKind};
use crate::driver::{DriverStep, EpisodeDriver};
use crate::env::{EgoAction, EnvError};
use crate::nn::{
    argmax, init, log_softmax, softmax, Activation, AdamConfig, AdamState, Mlp, NetworkSpec, NnError,
    ParameterSet,
};

pub use gae::{compute_gae, normalize_advantages, GaeInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            rollout_length: 2048,
            epochs: 10,
            minibatch_size: 256,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            entropy_coef: 0.01,
            normalize_advantages: true,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(format!("clip_epsilon must lie in (0, 1) (got {})", self.clip_epsilon));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(format!("gae_lambda must lie in [0, 1] (got {})", self.gae_lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if self.rollout_length == 0 || self.minibatch_size == 0 {
            return Err("rollout_length and minibatch_size must be >= 1".into());
        }
        if !self.rollout_length.is_multiple_of(self.minibatch_size) {
            return Err(format!(
                "rollout_length ({}) must be divisible by minibatch_size ({})",
                self.rollout_length, self.minibatch_size
            ));
        }
        for (name, lr) in [("policy_lr", self.policy_lr), ("value_lr", self.value_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(format!("{name} must be > 0 (got {lr})"));
            }
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(format!("entropy_coef must be >= 0 (got {})", self.entropy_coef));
        }
        if self.hidden.contains(&0) {
            return Err("hidden layer sizes must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-sample clipped surrogate `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the clipped branch is strictly smaller, so the sample carries no
/// policy gradient.
fn clip_active(ratio: f64, advantage: f64, clip_epsilon: f64) -> bool {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    clipped * advantage < ratio * advantage
}

/// A fixed-length on-policy batch. Log-probabilities are those of the
/// policy that collected it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    /// Row-major `len x obs_dim`.
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub boundaries: Vec<bool>,
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    /// Fill `advantages` and `value_targets`; targets use the advantages
    /// before normalization.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, normalize: bool) {
        let (mut adv, targets) = compute_gae(
            GaeInput {
                rewards: &self.rewards,
                values: &self.values,
                dones: &self.dones,
                boundaries: &self.boundaries,
                bootstrap_values: &self.bootstrap_values,
            },
            gamma,
            lambda,
        );
        if normalize {
            normalize_advantages(&mut adv);
        }
        self.advantages = adv;
        self.value_targets = targets;
    }

    fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.obs_dim);
        for &i in indices {
            out.extend_from_slice(self.observation(i));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    /// Mean clipped surrogate plus the entropy bonus.
    pub objective: f64,
    /// Gradient of `-objective`, ready for a descent step.
    pub descent_gradient: Vec<f64>,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// Clipped surrogate objective over the samples `indices` of `batch`.
pub fn ppo_objective(
    mlp: &Mlp,
    params: &[f64],
    batch: &RolloutBatch,
    indices: &[usize],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<ObjectiveOutput, NnError> {
    let n = indices.len();
    let n_actions = mlp.output_dim();
    let inputs = batch.gather(indices);
    let trace = mlp.forward_batch(params, &inputs, n)?;
    let mut out_grad = vec![0.0; n * n_actions];
    let (mut surrogate, mut entropy, mut clipped) = (0.0, 0.0, 0usize);
    let inv_n = 1.0 / n as f64;
    for (row, &i) in indices.iter().enumerate() {
        let logits = trace.output_row(row, n_actions);
        let logp = log_softmax(logits);
        let probs = softmax(logits);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (logp[a] - batch.log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(NnError::Divergence(format!("non-finite probability ratio at sample {i}")));
        }
        surrogate += clipped_surrogate(ratio, adv, clip_epsilon);
        if (ratio - 1.0).abs() > clip_epsilon {
            clipped += 1;
        }
        let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        entropy += h;

        let g = &mut out_grad[row * n_actions..(row + 1) * n_actions];
        if !clip_active(ratio, adv, clip_epsilon) {
            // d(rho * A)/dz_j = A * rho * (1[j = a] - p_j)
            for j in 0..n_actions {
                let onehot = if j == a { 1.0 } else { 0.0 };
                g[j] -= inv_n * adv * ratio * (onehot - probs[j]);
            }
        }
        // dH/dz_j = -p_j * (log p_j + H)
        for j in 0..n_actions {
            g[j] -= inv_n * entropy_coef * (-probs[j] * (logp[j] + h));
        }
    }
    let mut grad = vec![0.0; params.len()];
    mlp.backward_batch(params, &trace, &out_grad, &mut grad)?;
    let entropy = entropy * inv_n;
    Ok(ObjectiveOutput {
        objective: surrogate * inv_n + entropy_coef * entropy,
        descent_gradient: grad,
        clip_fraction: clipped as f64 * inv_n,
        entropy,
    })
}

/// Mean squared error between `V(s)` and the stored value targets, with its
/// descent gradient.
pub fn value_loss(
    mlp: &Mlp,
    params: &[f64],
    batch: &RolloutBatch,
    indices: &[usize],
) -> Result<(f64, Vec<f64>), NnError> {
    let n = indices.len();
    let inputs = batch.gather(indices);
    let trace = mlp.forward_batch(params, &inputs, n)?;
    let mut out_grad = vec![0.0; n];
    let mut loss = 0.0;
    for (row, &i) in indices.iter().enumerate() {
        let err = trace.output_row(row, 1)[0] - batch.value_targets[i];
        loss += err * err;
        out_grad[row] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(NnError::Divergence(format!("non-finite value loss {loss}")));
    }
    let mut grad = vec![0.0; params.len()];
    mlp.backward_batch(params, &trace, &out_grad, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateMetrics {
    pub policy_objective: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    /// Clip fraction of the first minibatch, measured before any step.
    pub initial_clip_fraction: f64,
    pub minibatches: usize,
}

#[derive(Debug)]
pub enum RolloutError {
    Env(EnvError),
    Nn(NnError),
}

impl std::fmt::Display for RolloutError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RolloutError::Env(e) => write!(f, "environment error: {e}"),
            RolloutError::Nn(e) => write!(f, "network error: {e}"),
        }
    }
}

impl std::error::Error for RolloutError {}

impl From<EnvError> for RolloutError {
    fn from(e: EnvError) -> Self {
        RolloutError::Env(e)
    }
}

impl From<NnError> for RolloutError {
    fn from(e: NnError) -> Self {
        RolloutError::Nn(e)
    }
}

#[derive(Debug, Clone)]
pub struct PpoLearner {
    config: PpoConfig,
    policy: Mlp,
    value: Mlp,
    policy_params: ParameterSet,
    value_params: ParameterSet,
    policy_adam: AdamState,
    value_adam: AdamState,
    rng: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
}

impl PpoLearner {
    pub fn new(config: PpoConfig, obs_dim: usize, n_actions: usize, seed: u64) -> Result<Self, NnError> {
        config.validate().map_err(NnError::InvalidSpec)?;
        let policy_spec = NetworkSpec::mlp(obs_dim, &config.hidden, n_actions, config.activation)?;
        let value_spec = NetworkSpec::mlp(obs_dim, &config.hidden, 1, config.activation)?;
        let policy_params = init(&policy_spec, seed)?;
        let value_params = init(&value_spec, seed.wrapping_add(1))?;
        Ok(Self {
            policy_adam: AdamState::new(AdamConfig::with_learning_rate(config.policy_lr), policy_params.len()),
            value_adam: AdamState::new(AdamConfig::with_learning_rate(config.value_lr), value_params.len()),
            policy: Mlp::new(policy_spec)?,
            value: Mlp::new(value_spec)?,
            policy_params,
            value_params,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
            env_steps: 0,
            updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn value(&self) -> &Mlp {
        &self.value
    }

    pub fn policy_params(&self) -> &ParameterSet {
        &self.policy_params
    }

    pub fn value_params(&self) -> &ParameterSet {
        &self.value_params
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn action_probabilities(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(softmax(&self.policy.forward(&self.policy_params.values, obs)?))
    }

    /// Most likely action, lowest index on ties.
    pub fn act_greedy(&self, obs: &[f64]) -> Result<usize, NnError> {
        Ok(argmax(&self.policy.forward(&self.policy_params.values, obs)?))
    }

    /// Sample from the categorical policy; returns the action and its
    /// log-probability.
    pub fn act_sample(&mut self, obs: &[f64]) -> Result<(usize, f64), NnError> {
        let logits = self.policy.forward(&self.policy_params.values, obs)?;
        let logp = log_softmax(&logits);
        let probs = softmax(&logits);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut action = probs.len() - 1;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                action = j;
                break;
            }
        }
        Ok((action, logp[action]))
    }

    pub fn state_value(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(self.value.forward(&self.value_params.values, obs)?[0])
    }

    /// Collect `length` steps, resetting episodes as they end. `on_step`
    /// sees every environment step in order.
    pub fn collect_rollout<F>(
        &mut self,
        driver: &mut EpisodeDriver,
        length: usize,
        mut on_step: F,
    ) -> Result<RolloutBatch, RolloutError>
    where
        F: FnMut(&DriverStep),
    {
        let obs_dim = self.policy.input_dim();
        let mut batch = RolloutBatch::new(obs_dim);
        for t in 0..length {
            let obs = driver.observation()?;
            let state = obs.as_slice();
            let (action, log_prob) = self.act_sample(state)?;
            let value = self.state_value(state)?;
            let ego_action = EgoAction::from_index(action).expect("policy output has one logit per action");
            let step = driver.step(ego_action)?;
            self.env_steps += 1;
            let out = &step.outcome;
            let boundary = out.done() || t + 1 == length;
            let bootstrap = if boundary && !out.terminated {
                self.state_value(out.observation.as_slice())?
            } else {
                0.0
            };
            batch.observations.extend_from_slice(state);
            batch.actions.push(action);
            batch.rewards.push(out.reward.total);
            batch.values.push(value);
            batch.log_probs.push(log_prob);
            batch.dones.push(out.terminated);
            batch.boundaries.push(boundary);
            batch.bootstrap_values.push(bootstrap);
            on_step(&step);
        }
        batch.compute_advantages(
            self.config.gamma,
            self.config.gae_lambda,
            self.config.normalize_advantages,
        );
        Ok(batch)
    }

    /// `epochs` passes of shuffled minibatches with separate policy and
    /// value Adam steps.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<UpdateMetrics, NnError> {
        let n = batch.len();
        let mut metrics = UpdateMetrics::default();
        if n == 0 || self.config.epochs == 0 {
            return Ok(metrics);
        }
        let mb = self.config.minibatch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                let obj = ppo_objective(
                    &self.policy,
                    &self.policy_params.values,
                    batch,
                    chunk,
                    self.config.clip_epsilon,
                    self.config.entropy_coef,
                )?;
                let (vloss, vgrad) = value_loss(&self.value, &self.value_params.values, batch, chunk)?;
                self.policy_adam.step(&mut self.policy_params.values, &obj.descent_gradient)?;
                self.value_adam.step(&mut self.value_params.values, &vgrad)?;
                if metrics.minibatches == 0 {
                    metrics.initial_clip_fraction = obj.clip_fraction;
                }
                metrics.minibatches += 1;
                metrics.policy_objective += obj.objective;
                metrics.value_loss += vloss;
                metrics.clip_fraction += obj.clip_fraction;
                metrics.entropy += obj.entropy;
            }
        }
        let k = metrics.minibatches as f64;
        metrics.policy_objective /= k;
        metrics.value_loss /= k;
        metrics.clip_fraction /= k;
        metrics.entropy /= k;
        self.updates += 1;
        Ok(metrics)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CheckpointKind::Ppo);
        let (ps, vs) = (self.policy.spec(), self.value.spec());
        ck.push_section("policy", ps, &self.policy_params.values);
        ck.push_section("value", vs, &self.value_params.values);
        ck.push_section("policy.adam_m", ps, &self.policy_adam.m);
        ck.push_section("policy.adam_v", ps, &self.policy_adam.v);
        ck.push_section("value.adam_m", vs, &self.value_adam.m);
        ck.push_section("value.adam_v", vs, &self.value_adam.v);
        ck.push_counter("policy_adam_t", self.policy_adam.t);
        ck.push_counter("value_adam_t", self.value_adam.t);
        ck.push_counter("env_steps", self.env_steps);
        ck.push_counter("updates", self.updates);
        ck
    }

    pub fn from_checkpoint(config: PpoConfig, ck: &Checkpoint, seed: u64) -> Result<Self, CheckpointError> {
        ck.expect_kind(CheckpointKind::Ppo)?;
        let policy = ck.section("policy")?;
        let mut learner = Self::new(config, policy.spec.input_dim(), policy.spec.output_dim(), seed)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let value = ck.section("value")?;
        if learner.policy.spec() != &policy.spec || learner.value.spec() != &value.spec {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint networks {:?} / {:?} do not match configured {:?} / {:?}",
                policy.spec.layer_sizes,
                value.spec.layer_sizes,
                learner.policy.spec().layer_sizes,
                learner.value.spec().layer_sizes
            )));
        }
        learner.policy_params = policy.params.clone();
        learner.value_params = value.params.clone();
        learner.policy_adam.m = ck.section("policy.adam_m")?.params.values.clone();
        learner.policy_adam.v = ck.section("policy.adam_v")?.params.values.clone();
        learner.value_adam.m = ck.section("value.adam_m")?.params.values.clone();
        learner.value_adam.v = ck.section("value.adam_v")?.params.values.clone();
        learner.policy_adam.t = ck.counter("policy_adam_t")?;
        learner.value_adam.t = ck.counter("value_adam_t")?;
        learner.env_steps = ck.counter("env_steps")?;
        learner.updates = ck.counter("updates")?;
        Ok(learner)
    }
}
