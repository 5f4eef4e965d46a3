//! Highway driving decision-making laboratory.
//!
//! A deterministic highway / on-ramp merge simulator with a weighted
//! safety-comfort-efficiency reward, DQN and PPO learners built on small
//! hand-written MLPs, a finite-state-machine rule baseline and an experiment
//! harness that exports return curves, path traces and fault logs as CSV.

pub mod checkpoint;
pub mod dqn;
pub mod driver;
pub mod env;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod rules;
