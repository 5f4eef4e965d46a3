//! Experiment orchestration: training runs, evaluation, trajectory export
//! and agent comparison, all driven by an [`ExperimentConfig`].
//!
//! Every output byte is a function of the configuration and seed list.

mod config;
mod metrics;
mod policy;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::env::EnvError;
use crate::nn::NnError;

pub use config::{
    AgentKind, CompareSection, ConfigError, EnvSection, ExperimentConfig, ExperimentSection, RewardSection,
    CONFIG_REFERENCE,
};
pub use metrics::{
    fmt_f64, mean_std, EpisodeMetrics, EpisodeTracker, FaultLog, MovingStats, COMPARE_HEADER, EVAL_CURVE_HEADER,
    EVAL_EPISODES_HEADER, FAULTS_HEADER, METRICS_HEADER, TRAJECTORY_HEADER,
};
pub use policy::{checkpoint_kind, EvalPolicy};
pub use run::{
    compare, eval_seeds, evaluate, export_trajectory, run_eval, run_train, training_eval_seeds, CompareReport,
    CompareRow, EvalEpisode, EvalPoint, EvalSummary, RunReport, TrainReport,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("network error: {0}")]
    Network(NnError),
}

impl HarnessError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Config(_) => 3,
            HarnessError::Io { .. } => 4,
            HarnessError::Checkpoint { .. } => 5,
            HarnessError::Divergence(_) => 6,
            HarnessError::Env(_) | HarnessError::Network(_) => 7,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Divergence(msg) => HarnessError::Divergence(msg),
            other => HarnessError::Network(other),
        }
    }
}

impl From<crate::ppo::RolloutError> for HarnessError {
    fn from(e: crate::ppo::RolloutError) -> Self {
        match e {
            crate::ppo::RolloutError::Env(e) => e.into(),
            crate::ppo::RolloutError::Nn(e) => e.into(),
        }
    }
}
