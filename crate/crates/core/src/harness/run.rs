use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::dqn::{DqnLearner, Transition};
use crate::driver::{episode_seed, DriverStep, EpisodeDriver};
use crate::env::{EgoAction, EnvConfig, HighwayEnv, Scenario, OBS_DIM};
use crate::ppo::PpoLearner;
use crate::rules::RuleAgent;

use super::config::{AgentKind, ExperimentConfig};
use super::metrics::{
    fmt_bool, fmt_f64, mean_std, EpisodeMetrics, EpisodeTracker, FaultLog, MovingStats, COMPARE_HEADER,
    EVAL_CURVE_HEADER, EVAL_EPISODES_HEADER, FAULTS_HEADER, METRICS_HEADER, TRAJECTORY_HEADER,
};
use super::policy::EvalPolicy;
use super::HarnessError;

/// Evaluation episodes never reuse training episode seeds.
const EVAL_SALT: u64 = 0xE7A1_5EED_0000_0001;

const MOVING_WINDOW: usize = 100;

/// Seeds of the fixed evaluation episodes of a training run.
pub fn training_eval_seeds(run_seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|k| episode_seed(run_seed ^ EVAL_SALT, k)).collect()
}

/// Seeds for `eval` and `compare`: episode `i` draws from the stream of
/// `seeds[i % n]`, so a single-seed list reproduces the in-training
/// evaluation episodes.
pub fn eval_seeds(seeds: &[u64], episodes: usize) -> Vec<u64> {
    let n = seeds.len();
    (0..episodes)
        .map(|i| episode_seed(seeds[i % n] ^ EVAL_SALT, (i / n) as u64))
        .collect()
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self, HarnessError> {
        let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut out = Self {
            writer: csv::Writer::from_writer(file),
            path,
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), HarnessError> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|e| HarnessError::io(&self.path, e.into()))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    ck.save(path).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    Checkpoint::load(path).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalEpisode {
    pub seed: u64,
    pub metrics: EpisodeMetricsRow,
}

/// Serializable subset of [`EpisodeMetrics`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetricsRow {
    pub episode_return: f64,
    pub length: usize,
    pub collided: bool,
    pub off_road: bool,
    pub mean_speed: f64,
    pub lane_changes: usize,
}

impl From<&EpisodeMetrics> for EpisodeMetricsRow {
    fn from(m: &EpisodeMetrics) -> Self {
        Self {
            episode_return: m.episode_return,
            length: m.length,
            collided: m.collided,
            off_road: m.off_road,
            mean_speed: m.mean_speed,
            lane_changes: m.lane_changes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub agent: AgentKind,
    pub scenario: Scenario,
    pub episodes: usize,
    pub return_mean: f64,
    /// Sample standard deviation; 0 for a single episode.
    pub return_std: f64,
    pub collision_rate: f64,
    pub off_road_rate: f64,
    pub mean_speed: f64,
    /// Collision or off-road episodes.
    pub faults: u64,
    #[serde(skip)]
    pub per_episode: Vec<EvalEpisode>,
}

/// Run one deterministic episode per seed with `policy`.
pub fn evaluate(
    policy: &mut EvalPolicy,
    agent: AgentKind,
    env_config: &EnvConfig,
    seeds: &[u64],
) -> Result<EvalSummary, HarnessError> {
    let mut env = HighwayEnv::new(*env_config)?;
    let mut per_episode = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let mut obs = env.reset(seed)?;
        policy.begin_episode(seed);
        let mut tracker = EpisodeTracker::default();
        loop {
            let action = policy.act(&obs)?;
            let outcome = env.step(action)?;
            obs = outcome.observation;
            let step = DriverStep {
                state: obs,
                action,
                outcome,
                episode: i as u64,
                episode_step: env.steps(),
            };
            if let Some(m) = tracker.record(&step, env.steps() as u64) {
                per_episode.push(EvalEpisode {
                    seed,
                    metrics: (&m).into(),
                });
                break;
            }
        }
    }
    Ok(summarize(agent, env_config.road.scenario, per_episode))
}

fn summarize(agent: AgentKind, scenario: Scenario, per_episode: Vec<EvalEpisode>) -> EvalSummary {
    let n = per_episode.len();
    let returns: Vec<f64> = per_episode.iter().map(|e| e.metrics.episode_return).collect();
    let (return_mean, return_std) = mean_std(&returns);
    let count = |f: &dyn Fn(&EpisodeMetricsRow) -> bool| per_episode.iter().filter(|e| f(&e.metrics)).count();
    let collisions = count(&|m| m.collided);
    let off_road = count(&|m| m.off_road);
    let faults = count(&|m| m.collided || m.off_road) as u64;
    let denom = n.max(1) as f64;
    let mean_speed = per_episode.iter().map(|e| e.metrics.mean_speed).sum::<f64>() / denom;
    EvalSummary {
        agent,
        scenario,
        episodes: n,
        return_mean,
        return_std,
        collision_rate: collisions as f64 / denom,
        off_road_rate: off_road as f64 / denom,
        mean_speed,
        faults,
        per_episode,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub global_step: u64,
    pub episodes: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub collision_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub dir: PathBuf,
    pub episodes: Vec<EpisodeMetrics>,
    pub evals: Vec<EvalPoint>,
    pub faults: FaultLog,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub runs: Vec<RunReport>,
}

enum Trainer {
    Dqn(Box<DqnLearner>),
    Ppo(Box<PpoLearner>),
    Rules(RuleAgent),
    Random(ChaCha8Rng),
}

impl Trainer {
    fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        Ok(match config.experiment.agent {
            AgentKind::Dqn => Trainer::Dqn(Box::new(DqnLearner::new(
                config.dqn.clone(),
                OBS_DIM,
                EgoAction::COUNT,
                seed,
            )?)),
            AgentKind::Ppo => Trainer::Ppo(Box::new(PpoLearner::new(
                config.ppo.clone(),
                OBS_DIM,
                EgoAction::COUNT,
                seed,
            )?)),
            AgentKind::Rules => Trainer::Rules(RuleAgent::new(config.rules, config.env_config().road)),
            AgentKind::Random => Trainer::Random(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        match self {
            Trainer::Dqn(l) => l.to_checkpoint(),
            Trainer::Ppo(l) => l.to_checkpoint(),
            Trainer::Rules(_) => Checkpoint::new(CheckpointKind::Rules),
            Trainer::Random(_) => Checkpoint::new(CheckpointKind::Random),
        }
    }

    fn eval_policy(&self, config: &ExperimentConfig) -> EvalPolicy {
        match self {
            Trainer::Dqn(l) => EvalPolicy::Greedy {
                mlp: l.mlp().clone(),
                params: l.online_params().clone(),
            },
            Trainer::Ppo(l) => EvalPolicy::Greedy {
                mlp: l.policy().clone(),
                params: l.policy_params().clone(),
            },
            Trainer::Rules(_) => EvalPolicy::rules(config.rules, config.env_config().road),
            Trainer::Random(_) => EvalPolicy::random(),
        }
    }

    fn parameters_finite(&self) -> bool {
        match self {
            Trainer::Dqn(l) => l.online_params().all_finite(),
            Trainer::Ppo(l) => l.policy_params().all_finite() && l.value_params().all_finite(),
            _ => true,
        }
    }
}

/// Per-run CSV writers and running statistics.
struct Books {
    metrics: CsvOut,
    faults: CsvOut,
    tracker: EpisodeTracker,
    moving: MovingStats,
    fault_log: FaultLog,
    episodes: Vec<EpisodeMetrics>,
    global_step: u64,
}

impl Books {
    fn record(&mut self, step: &DriverStep) -> Result<(), HarnessError> {
        self.global_step += 1;
        self.fault_log.record(step);
        self.faults.row([
            self.global_step.to_string(),
            self.fault_log.faults_cum.to_string(),
            fmt_f64(self.fault_log.fault_duration_cum_s),
        ])?;
        if let Some(m) = self.tracker.record(step, self.global_step) {
            let (mean, std) = self.moving.push(m.episode_return);
            self.metrics.row([
                m.episode.to_string(),
                m.global_step.to_string(),
                fmt_f64(m.episode_return),
                m.length.to_string(),
                fmt_bool(m.collided).to_string(),
                fmt_bool(m.off_road).to_string(),
                fmt_f64(mean),
                fmt_f64(std),
                self.fault_log.faults_cum.to_string(),
                fmt_f64(self.fault_log.fault_duration_cum_s),
            ])?;
            self.episodes.push(m);
        }
        Ok(())
    }
}

struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    env_config: EnvConfig,
    seeds: Vec<u64>,
    curve: CsvOut,
    best: f64,
    best_path: PathBuf,
    points: Vec<EvalPoint>,
}

impl Evaluator<'_> {
    fn run(&mut self, trainer: &Trainer, books: &Books) -> Result<(), HarnessError> {
        if !trainer.parameters_finite() {
            return Err(HarnessError::Divergence("non-finite network parameters".into()));
        }
        let mut policy = trainer.eval_policy(self.config);
        let s = evaluate(&mut policy, self.config.experiment.agent, &self.env_config, &self.seeds)?;
        self.curve.row([
            books.global_step.to_string(),
            books.episodes.len().to_string(),
            fmt_f64(s.return_mean),
            fmt_f64(s.return_std),
            fmt_f64(s.collision_rate),
            fmt_f64(s.off_road_rate),
            fmt_f64(s.mean_speed),
        ])?;
        self.points.push(EvalPoint {
            global_step: books.global_step,
            episodes: books.episodes.len() as u64,
            return_mean: s.return_mean,
            return_std: s.return_std,
            collision_rate: s.collision_rate,
        });
        if s.return_mean > self.best {
            self.best = s.return_mean;
            save_checkpoint(&trainer.checkpoint(), &self.best_path)?;
        }
        Ok(())
    }
}

fn train_one(config: &ExperimentConfig, seed: u64, dir: PathBuf) -> Result<RunReport, HarnessError> {
    create_dir(&dir)?;
    let x = &config.experiment;
    let env_config = config.env_config();
    let mut trainer = Trainer::new(config, seed)?;
    let mut books = Books {
        metrics: CsvOut::create(dir.join("metrics.csv"), &METRICS_HEADER)?,
        faults: CsvOut::create(dir.join("faults.csv"), &FAULTS_HEADER)?,
        tracker: EpisodeTracker::default(),
        moving: MovingStats::new(MOVING_WINDOW),
        fault_log: FaultLog::default(),
        episodes: Vec::new(),
        global_step: 0,
    };
    let mut evaluator = Evaluator {
        config,
        env_config,
        seeds: training_eval_seeds(seed, x.eval_episodes),
        curve: CsvOut::create(dir.join("eval.csv"), &EVAL_CURVE_HEADER)?,
        best: f64::NEG_INFINITY,
        best_path: dir.join("checkpoint_best.bin"),
        points: Vec::new(),
    };
    let mut driver = EpisodeDriver::new(HighwayEnv::new(env_config)?, seed);
    let total = x.total_env_steps;
    let mut next_eval = x.eval_every;
    let mut last_eval_step = None;

    while books.global_step < total {
        match &mut trainer {
            Trainer::Ppo(learner) => {
                let len = (learner.config().rollout_length as u64).min(total - books.global_step) as usize;
                let mut failure = None;
                let batch = learner.collect_rollout(&mut driver, len, |step| {
                    if failure.is_none() {
                        failure = books.record(step).err();
                    }
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
                learner.update(&batch)?;
            }
            other => {
                let obs = driver.observation()?;
                if driver.env().steps() == 0 {
                    if let Trainer::Rules(agent) = other {
                        agent.reset();
                    }
                }
                let action = match other {
                    Trainer::Dqn(learner) => {
                        EgoAction::from_index(learner.act(obs.as_slice())?).expect("Q head has one output per action")
                    }
                    Trainer::Rules(agent) => agent.act(&obs),
                    Trainer::Random(rng) => {
                        use rand::Rng;
                        EgoAction::from_index(rng.gen_range(0..EgoAction::COUNT)).expect("index in range")
                    }
                    Trainer::Ppo(_) => unreachable!(),
                };
                let step = driver.step(action)?;
                if let Trainer::Dqn(learner) = other {
                    learner.observe(Transition {
                        state: obs.to_vec(),
                        action: action.index(),
                        reward: step.outcome.reward.total,
                        next_state: step.outcome.observation.to_vec(),
                        done: step.outcome.terminated,
                    });
                    learner.train_step()?;
                }
                books.record(&step)?;
            }
        }
        if books.global_step >= next_eval {
            evaluator.run(&trainer, &books)?;
            last_eval_step = Some(books.global_step);
            while next_eval <= books.global_step {
                next_eval += x.eval_every;
            }
        }
    }
    if total > 0 && last_eval_step != Some(books.global_step) {
        evaluator.run(&trainer, &books)?;
    }

    let checkpoint = dir.join("checkpoint.bin");
    save_checkpoint(&trainer.checkpoint(), &checkpoint)?;
    books.metrics.finish()?;
    books.faults.finish()?;
    evaluator.curve.finish()?;
    Ok(RunReport {
        seed,
        dir,
        episodes: books.episodes,
        evals: evaluator.points,
        faults: books.fault_log,
        checkpoint,
    })
}

/// Train the configured agent once per seed under `out_root/seed_<n>/`.
///
/// Each run writes `metrics.csv` (one row per episode), `faults.csv` (one
/// row per environment step), `eval.csv` (one row per evaluation),
/// `checkpoint.bin` and, once evaluated, `checkpoint_best.bin`.
pub fn run_train(config: &ExperimentConfig, out_root: &Path) -> Result<TrainReport, HarnessError> {
    create_dir(out_root)?;
    let resolved = out_root.join("config.toml");
    fs::write(&resolved, config.to_toml()).map_err(|e| HarnessError::io(&resolved, e))?;
    let mut runs = Vec::with_capacity(config.experiment.seeds.len());
    for &seed in &config.experiment.seeds {
        runs.push(train_one(config, seed, out_root.join(format!("seed_{seed}")))?);
    }
    Ok(TrainReport { runs })
}

fn policy_for(
    config: &ExperimentConfig,
    agent: AgentKind,
    checkpoint: Option<&Path>,
) -> Result<EvalPolicy, HarnessError> {
    let ck = match checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None if agent.is_learned() => {
            return Err(HarnessError::Usage(format!("agent `{agent}` needs --checkpoint")));
        }
        None => None,
    };
    EvalPolicy::load(agent, ck.as_ref(), config.rules, config.env_config().road).map_err(|source| {
        HarnessError::Checkpoint {
            path: checkpoint.map(Path::to_path_buf).unwrap_or_default(),
            source,
        }
    })
}

fn write_eval_outputs(summary: &EvalSummary, out_dir: &Path) -> Result<(), HarnessError> {
    create_dir(out_dir)?;
    let mut csv = CsvOut::create(out_dir.join("eval_episodes.csv"), &EVAL_EPISODES_HEADER)?;
    for (i, e) in summary.per_episode.iter().enumerate() {
        let m = &e.metrics;
        csv.row([
            i.to_string(),
            e.seed.to_string(),
            fmt_f64(m.episode_return),
            m.length.to_string(),
            fmt_bool(m.collided).to_string(),
            fmt_bool(m.off_road).to_string(),
            fmt_f64(m.mean_speed),
            m.lane_changes.to_string(),
        ])?;
    }
    csv.finish()?;
    let path = out_dir.join("eval_summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| HarnessError::io(&path, e))
}

/// Evaluate the configured agent on `eval_episodes` episodes drawn from the
/// seed list; writes `eval_episodes.csv` and `eval_summary.json` to
/// `out_dir`.
pub fn run_eval(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<EvalSummary, HarnessError> {
    let agent = config.experiment.agent;
    let mut policy = policy_for(config, agent, checkpoint)?;
    let seeds = eval_seeds(&config.experiment.seeds, config.experiment.eval_episodes);
    let summary = evaluate(&mut policy, agent, &config.env_config(), &seeds)?;
    write_eval_outputs(&summary, out_dir)?;
    Ok(summary)
}

/// Write one CSV row per decision step of the episode reset with `seed`.
/// Returns the episode return.
pub fn export_trajectory(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    seed: u64,
    out_file: &Path,
) -> Result<f64, HarnessError> {
    let mut policy = policy_for(config, config.experiment.agent, checkpoint)?;
    if let Some(parent) = out_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut csv = CsvOut::create(out_file.to_path_buf(), &TRAJECTORY_HEADER)?;
    let mut env = HighwayEnv::new(config.env_config())?;
    let mut obs = env.reset(seed)?;
    policy.begin_episode(seed);
    let mut ret = 0.0;
    loop {
        let action = policy.act(&obs)?;
        let out = env.step(action)?;
        let ego = env.ego();
        let r = out.reward;
        ret += r.total;
        csv.row([
            fmt_f64(out.info.sim_time),
            fmt_f64(ego.x),
            fmt_f64(ego.y),
            out.info.ego_lane.to_string(),
            fmt_f64(ego.v),
            action.code().to_string(),
            fmt_f64(r.safety),
            fmt_f64(r.comfort),
            fmt_f64(r.efficiency),
            fmt_f64(r.total),
        ])?;
        obs = out.observation;
        if out.done() {
            break;
        }
    }
    csv.finish()?;
    Ok(ret)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub agent: AgentKind,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Agents that could not be evaluated, with the reason.
    pub failures: Vec<(AgentKind, String)>,
}

impl CompareReport {
    /// Fixed-width console table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>8} {:>12} {:>10} {:>10} {:>10} {:>10}\n",
            "agent", "episodes", "return_mean", "return_std", "collision", "off_road", "speed"
        );
        for row in &self.rows {
            let m = &row.summary;
            s.push_str(&format!(
                "{:<8} {:>8} {:>12.4} {:>10.4} {:>10.4} {:>10.4} {:>10.3}\n",
                row.agent.to_string(),
                m.episodes,
                m.return_mean,
                m.return_std,
                m.collision_rate,
                m.off_road_rate,
                m.mean_speed
            ));
        }
        for (agent, reason) in &self.failures {
            s.push_str(&format!("{:<8} unavailable: {reason}\n", agent.to_string()));
        }
        s
    }
}

/// Evaluate every agent in `[compare]` on the same seeds and write
/// `comparison.csv` to `out_dir`.
pub fn compare(config: &ExperimentConfig, out_dir: &Path) -> Result<CompareReport, HarnessError> {
    let agents = if config.compare.agents.is_empty() {
        vec![AgentKind::Dqn, AgentKind::Ppo, AgentKind::Rules, AgentKind::Random]
    } else {
        config.compare.agents.clone()
    };
    let seeds = eval_seeds(&config.experiment.seeds, config.experiment.eval_episodes);
    let env_config = config.env_config();
    let mut report = CompareReport {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for agent in agents {
        let checkpoint = config.compare.checkpoints.get(&agent).map(PathBuf::as_path);
        let policy = match policy_for(config, agent, checkpoint) {
            Ok(p) => p,
            Err(e @ (HarnessError::Usage(_) | HarnessError::Checkpoint { .. })) => {
                report.failures.push((agent, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut policy = policy;
        let summary = evaluate(&mut policy, agent, &env_config, &seeds)?;
        report.rows.push(CompareRow { agent, summary });
    }
    create_dir(out_dir)?;
    let mut csv = CsvOut::create(out_dir.join("comparison.csv"), &COMPARE_HEADER)?;
    for row in &report.rows {
        let m = &row.summary;
        csv.row([
            row.agent.to_string(),
            m.episodes.to_string(),
            fmt_f64(m.return_mean),
            fmt_f64(m.return_std),
            fmt_f64(m.collision_rate),
            fmt_f64(m.off_road_rate),
            fmt_f64(m.mean_speed),
            m.faults.to_string(),
        ])?;
    }
    csv.finish()?;
    Ok(report)
}
