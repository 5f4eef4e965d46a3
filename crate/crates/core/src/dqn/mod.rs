//! Deep Q-learning with experience replay and a hard-synced target network.
//!
//! Targets are `y = r + (1 - done) * gamma * max_a' Q(s', a'; target)` and
//! the loss is the batch mean of `(y - Q(s, a; online))^2`; gradients flow
//! only through `Q(s, a; online)`.

mod replay;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointKind};
use crate::nn::{argmax, init, Activation, AdamConfig, AdamState, Mlp, NetworkSpec, NnError, ParameterSet};

pub use replay::{ReplayBuffer, Transition};

/// What `target_sync_every` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncUnit {
    GradientSteps,
    EnvSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_every: u64,
    pub target_sync_unit: SyncUnit,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub epsilon_decay_steps: u64,
    /// Minimum buffer size before gradient steps start.
    pub learn_start: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_sync_every: 1000,
            target_sync_unit: SyncUnit::GradientSteps,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            learn_start: 1000,
            hidden: vec![128, 128],
            activation: Activation::Relu,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if self.buffer_capacity == 0 {
            return Err("buffer_capacity must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(format!(
                "batch_size must lie in [1, buffer_capacity] (got {})",
                self.batch_size
            ));
        }
        if self.target_sync_every == 0 {
            return Err("target_sync_every must be >= 1".into());
        }
        for (name, eps) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(format!("{name} must lie in [0, 1] (got {eps})"));
            }
        }
        if self.hidden.contains(&0) {
            return Err("hidden layer sizes must be >= 1".into());
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon_at(&self, env_step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || env_step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = env_step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Epsilon-greedy choice; greedy ties go to the lowest index.
pub fn select_action<R: Rng>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let explore: f64 = rng.gen();
    if explore < epsilon {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

fn stack_states<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for row in rows {
        out.extend_from_slice(row);
    }
    out
}

/// Bellman targets from the frozen target network.
pub fn compute_targets(
    mlp: &Mlp,
    target_params: &[f64],
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>, NnError> {
    if batch.is_empty() {
        return Err(NnError::Dimension {
            what: "target batch",
            expected: 1,
            got: 0,
        });
    }
    let n_actions = mlp.output_dim();
    let next = stack_states(
        batch.iter().map(|t| t.next_state.as_slice()),
        mlp.input_dim(),
        batch.len(),
    );
    let trace = mlp.forward_batch(target_params, &next, batch.len())?;
    let mut targets = Vec::with_capacity(batch.len());
    for (i, t) in batch.iter().enumerate() {
        let q_next = trace.output_row(i, n_actions);
        if q_next.iter().any(|q| !q.is_finite()) {
            return Err(NnError::Divergence("non-finite target Q value".into()));
        }
        let y = if t.done {
            t.reward
        } else {
            let best = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * best
        };
        targets.push(y);
    }
    Ok(targets)
}

/// Mean squared TD error and its gradient with respect to the online
/// parameters. `targets` are constants.
pub fn loss_and_gradient(
    mlp: &Mlp,
    params: &[f64],
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, Vec<f64>), NnError> {
    if targets.len() != batch.len() || batch.is_empty() {
        return Err(NnError::Dimension {
            what: "targets",
            expected: batch.len(),
            got: targets.len(),
        });
    }
    let n = batch.len();
    let n_actions = mlp.output_dim();
    let states = stack_states(batch.iter().map(|t| t.state.as_slice()), mlp.input_dim(), n);
    let trace = mlp.forward_batch(params, &states, n)?;
    let mut out_grad = vec![0.0; n * n_actions];
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let q = trace.output_row(i, n_actions)[t.action];
        let err = q - targets[i];
        loss += err * err;
        out_grad[i * n_actions + t.action] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(NnError::Divergence(format!("non-finite TD loss {loss}")));
    }
    let mut grad = vec![0.0; params.len()];
    mlp.backward_batch(params, &trace, &out_grad, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    /// Buffer smaller than `learn_start`.
    Skipped { buffer_size: usize },
    Trained {
        loss: f64,
        epsilon: f64,
        buffer_size: usize,
        target_synced: bool,
    },
}

#[derive(Debug, Clone)]
pub struct DqnLearner {
    config: DqnConfig,
    mlp: Mlp,
    online: ParameterSet,
    target: ParameterSet,
    adam: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    grad_steps: u64,
}

impl DqnLearner {
    pub fn new(config: DqnConfig, obs_dim: usize, n_actions: usize, seed: u64) -> Result<Self, NnError> {
        config.validate().map_err(NnError::InvalidSpec)?;
        let spec = NetworkSpec::mlp(obs_dim, &config.hidden, n_actions, config.activation)?;
        let online = init(&spec, seed)?;
        let target = online.clone();
        let adam = AdamState::new(
            AdamConfig::with_learning_rate(config.learning_rate),
            online.len(),
        );
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            mlp: Mlp::new(spec)?,
            online,
            target,
            adam,
            // decorrelate from the weight-init stream
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
            env_steps: 0,
            grad_steps: 0,
            config,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn online_params(&self) -> &ParameterSet {
        &self.online
    }

    pub fn online_params_mut(&mut self) -> &mut ParameterSet {
        &mut self.online
    }

    pub fn target_params(&self) -> &ParameterSet {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.env_steps)
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        self.mlp.forward(&self.online.values, state)
    }

    /// Exploratory action under the current epsilon.
    pub fn act(&mut self, state: &[f64]) -> Result<usize, NnError> {
        let q = self.q_values(state)?;
        let eps = self.epsilon();
        Ok(select_action(&q, eps, &mut self.rng))
    }

    pub fn act_greedy(&self, state: &[f64]) -> Result<usize, NnError> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Store a transition and advance the environment-step counter.
    pub fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
        self.env_steps += 1;
        if self.config.target_sync_unit == SyncUnit::EnvSteps
            && self.env_steps.is_multiple_of(self.config.target_sync_every)
        {
            self.sync_target();
        }
    }

    pub fn sync_target(&mut self) {
        self.target.values.copy_from_slice(&self.online.values);
    }

    /// One gradient step on a uniformly sampled minibatch.
    pub fn train_step(&mut self) -> Result<TrainOutcome, NnError> {
        if self.buffer.len() < self.config.learn_start.max(1) {
            return Ok(TrainOutcome::Skipped {
                buffer_size: self.buffer.len(),
            });
        }
        let slots = self.buffer.sample_slots(&mut self.rng, self.config.batch_size);
        let batch: Vec<&Transition> = slots.iter().map(|&s| self.buffer.get(s)).collect();
        let targets = compute_targets(&self.mlp, &self.target.values, &batch, self.config.gamma)?;
        let (loss, grad) = loss_and_gradient(&self.mlp, &self.online.values, &batch, &targets)?;
        self.adam.step(&mut self.online.values, &grad)?;
        self.grad_steps += 1;
        let mut target_synced = false;
        if self.config.target_sync_unit == SyncUnit::GradientSteps
            && self.grad_steps.is_multiple_of(self.config.target_sync_every)
        {
            self.sync_target();
            target_synced = true;
        }
        Ok(TrainOutcome::Trained {
            loss,
            epsilon: self.epsilon(),
            buffer_size: self.buffer.len(),
            target_synced,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let spec = self.mlp.spec();
        let mut ck = Checkpoint::new(CheckpointKind::Dqn);
        ck.push_section("q", spec, &self.online.values);
        ck.push_section("q_target", spec, &self.target.values);
        ck.push_section("q.adam_m", spec, &self.adam.m);
        ck.push_section("q.adam_v", spec, &self.adam.v);
        ck.push_counter("adam_t", self.adam.t);
        ck.push_counter("env_steps", self.env_steps);
        ck.push_counter("grad_steps", self.grad_steps);
        ck
    }

    /// Restore parameters, optimizer state and counters. The replay buffer
    /// is not part of a checkpoint and starts empty.
    pub fn from_checkpoint(config: DqnConfig, ck: &Checkpoint, seed: u64) -> Result<Self, CheckpointError> {
        ck.expect_kind(CheckpointKind::Dqn)?;
        let q = ck.section("q")?;
        let spec = &q.spec;
        let mut learner = Self::new(config, spec.input_dim(), spec.output_dim(), seed)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if learner.mlp.spec() != spec {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint network {:?} does not match configured {:?}",
                spec.layer_sizes,
                learner.mlp.spec().layer_sizes
            )));
        }
        learner.online = q.params.clone();
        learner.target = ck.section("q_target")?.params.clone();
        learner.adam.m = ck.section("q.adam_m")?.params.values.clone();
        learner.adam.v = ck.section("q.adam_v")?.params.values.clone();
        learner.adam.t = ck.counter("adam_t")?;
        learner.env_steps = ck.counter("env_steps")?;
        learner.grad_steps = ck.counter("grad_steps")?;
        Ok(learner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;

    fn tiny_config() -> DqnConfig {
        DqnConfig {
            batch_size: 8,
            buffer_capacity: 100,
            learn_start: 8,
            target_sync_every: 5,
            hidden: vec![6],
            ..DqnConfig::default()
        }
    }

    fn random_transition(rng: &mut ChaCha8Rng, dim: usize, n_actions: usize) -> Transition {
        Transition {
            state: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..n_actions),
            reward: rng.gen_range(-1.0..1.0),
            next_state: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: rng.gen_bool(0.3),
        }
    }

    #[test]
    fn greedy_and_tie_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.0, 1.0, 0.0, 0.0, 0.0], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[1.0, 1.0, 0.0, 0.0, 0.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 5];
        let n = 10_000;
        for _ in 0..n {
            counts[select_action(&[5.0, 0.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let expected = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 4 degrees of freedom, 99.9% quantile is 18.47
        assert!(chi2 < 18.47, "chi2 = {chi2}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() <= 0.02);
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig::default();
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(5_000) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(10_000), 0.05);
        assert_eq!(cfg.epsilon_at(1_000_000), 0.05);
    }

    #[test]
    fn target_examples() {
        let spec = NetworkSpec::new(vec![2, 3], Activation::Relu).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        // zero weights, biases [0, 2, 1]: max Q' = 2 everywhere
        let mut params = ParameterSet::zeros(&spec);
        params.values[6..9].copy_from_slice(&[0.0, 2.0, 1.0]);
        let terminal = Transition {
            state: vec![0.0, 0.0],
            action: 0,
            reward: -1.0,
            next_state: vec![1.0, 1.0],
            done: true,
        };
        let live = Transition {
            reward: 1.0,
            done: false,
            ..terminal.clone()
        };
        let y = compute_targets(&mlp, &params.values, &[&terminal, &live], 0.99).unwrap();
        assert_eq!(y[0], -1.0);
        assert!((y[1] - 2.98).abs() < 1e-12);
        let y0 = compute_targets(&mlp, &params.values, &[&terminal, &live], 0.0).unwrap();
        assert_eq!(y0, vec![-1.0, 1.0]);
    }

    #[test]
    fn terminal_target_ignores_next_state() {
        let spec = NetworkSpec::mlp(3, &[4], 2, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p1 = init(&spec, 1).unwrap();
        let p2 = init(&spec, 2).unwrap();
        let t = Transition {
            state: vec![0.1; 3],
            action: 1,
            reward: 0.5,
            next_state: vec![0.7, -0.2, 0.3],
            done: true,
        };
        assert_eq!(
            compute_targets(&mlp, &p1.values, &[&t], 0.99).unwrap(),
            compute_targets(&mlp, &p2.values, &[&t], 0.99).unwrap()
        );
    }

    #[test]
    fn zero_error_zero_gradient() {
        let spec = NetworkSpec::mlp(3, &[4], 2, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<Transition> = (0..5).map(|_| random_transition(&mut rng, 3, 2)).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let y: Vec<f64> = refs
            .iter()
            .map(|t| mlp.forward(&p.values, &t.state).unwrap()[t.action])
            .collect();
        let (loss, grad) = loss_and_gradient(&mlp, &p.values, &refs, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_sample_linear_chain_rule() {
        let spec = NetworkSpec::new(vec![2, 2], Activation::Relu).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = ParameterSet::from_values(vec![0.5, -1.0, 2.0, 0.25, 0.1, -0.2]);
        let t = Transition {
            state: vec![1.0, 2.0],
            action: 1,
            reward: 0.0,
            next_state: vec![0.0, 0.0],
            done: true,
        };
        let (loss, grad) = loss_and_gradient(&mlp, &p.values, &[&t], &[3.0]).unwrap();
        // Q(s,1) = 2*1 + 0.25*2 - 0.2 = 2.3; err = -0.7
        let err: f64 = 2.3 - 3.0;
        assert!((loss - err * err).abs() < 1e-12);
        let expected = [0.0, 0.0, 2.0 * err * 1.0, 2.0 * err * 2.0, 0.0, 2.0 * err];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let spec = NetworkSpec::mlp(4, &[7, 5], 3, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 12).unwrap();
        let target = init(&spec, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng, 4, 3)).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = compute_targets(&mlp, &target.values, &refs, 0.99).unwrap();
        let (_, grad) = loss_and_gradient(&mlp, &p.values, &refs, &y).unwrap();
        let report = finite_difference_check(
            &p.values,
            &grad,
            |q| loss_and_gradient(&mlp, q, &refs, &y).unwrap().0,
            1e-5,
        );
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn skips_until_learn_start_then_syncs() {
        let mut learner = DqnLearner::new(tiny_config(), 3, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..7 {
            learner.observe(random_transition(&mut rng, 3, 2));
            assert!(matches!(learner.train_step().unwrap(), TrainOutcome::Skipped { .. }));
        }
        let frozen = learner.target_params().clone();
        for step in 1..=5 {
            learner.observe(random_transition(&mut rng, 3, 2));
            let out = learner.train_step().unwrap();
            if step < 5 {
                assert!(learner.target_params().bitwise_eq(&frozen), "target moved between syncs");
                assert!(!learner.online_params().bitwise_eq(&frozen));
            } else {
                assert!(matches!(out, TrainOutcome::Trained { target_synced: true, .. }));
                assert!(learner.target_params().bitwise_eq(learner.online_params()));
            }
        }
    }

    #[test]
    fn tabular_update_moves_toward_target() {
        // one-hot state, single linear layer, one repeated transition
        let cfg = DqnConfig {
            batch_size: 4,
            buffer_capacity: 10,
            learn_start: 1,
            learning_rate: 1e-3,
            hidden: vec![],
            ..DqnConfig::default()
        };
        let mut learner = DqnLearner::new(cfg, 3, 2, 5).unwrap();
        let t = Transition {
            state: vec![0.0, 1.0, 0.0],
            action: 1,
            reward: 1.0,
            next_state: vec![0.0, 0.0, 1.0],
            done: true,
        };
        learner.observe(t.clone());
        let mut gap = (learner.q_values(&t.state).unwrap()[1] - 1.0).abs();
        for _ in 0..50 {
            learner.train_step().unwrap();
            let g = (learner.q_values(&t.state).unwrap()[1] - 1.0).abs();
            assert!(g < gap, "{g} !< {gap}");
            gap = g;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut learner = DqnLearner::new(tiny_config(), 3, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            learner.observe(random_transition(&mut rng, 3, 2));
            learner.train_step().unwrap();
        }
        let ck = learner.to_checkpoint();
        let back = DqnLearner::from_checkpoint(tiny_config(), &Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), 0).unwrap();
        assert!(back.online_params().bitwise_eq(learner.online_params()));
        assert!(back.target_params().bitwise_eq(learner.target_params()));
        assert_eq!(back.grad_steps(), learner.grad_steps());
        assert_eq!(back.env_steps(), 20);
    }
}
