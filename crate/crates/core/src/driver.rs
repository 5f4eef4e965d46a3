//! Auto-resetting episode loop over a [`HighwayEnv`].
//!
//! Episode `k` of a run is reset with the `k`-th draw of a ChaCha stream
//! seeded by the run seed, so a run seed fixes every episode.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EgoAction, EnvError, HighwayEnv, Observation, StepOutcome};

/// Seed of episode `index` (0-based) for a run seeded with `run_seed`.
pub fn episode_seed(run_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverStep {
    /// Observation the action was chosen from.
    pub state: Observation,
    pub action: EgoAction,
    pub outcome: StepOutcome,
    /// 0-based index of the episode this step belongs to.
    pub episode: u64,
    /// 1-based step number within the episode.
    pub episode_step: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeDriver {
    env: HighwayEnv,
    run_seed: u64,
    episodes_started: u64,
    episode_step: usize,
    current: Option<Observation>,
}

impl EpisodeDriver {
    pub fn new(env: HighwayEnv, run_seed: u64) -> Self {
        Self {
            env,
            run_seed,
            episodes_started: 0,
            episode_step: 0,
            current: None,
        }
    }

    pub fn env(&self) -> &HighwayEnv {
        &self.env
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }

    /// Current observation, starting a new episode if the last one ended.
    pub fn observation(&mut self) -> Result<Observation, EnvError> {
        if let Some(obs) = self.current {
            return Ok(obs);
        }
        let seed = episode_seed(self.run_seed, self.episodes_started);
        let obs = self.env.reset(seed)?;
        self.episodes_started += 1;
        self.episode_step = 0;
        self.current = Some(obs);
        Ok(obs)
    }

    pub fn step(&mut self, action: EgoAction) -> Result<DriverStep, EnvError> {
        let state = self.observation()?;
        let outcome = self.env.step(action)?;
        self.episode_step += 1;
        self.current = if outcome.done() {
            None
        } else {
            Some(outcome.observation)
        };
        Ok(DriverStep {
            state,
            action,
            outcome,
            episode: self.episodes_started - 1,
            episode_step: self.episode_step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    #[test]
    fn episode_seeds_follow_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 0..5 {
            assert_eq!(episode_seed(42, k), rng.next_u64());
        }
        assert_ne!(episode_seed(42, 0), episode_seed(43, 0));
    }

    #[test]
    fn auto_resets_after_episode_end() {
        let cfg = EnvConfig {
            horizon: 3,
            ..EnvConfig::default()
        };
        let mut driver = EpisodeDriver::new(HighwayEnv::new(cfg).unwrap(), 9);
        let mut episodes = Vec::new();
        for _ in 0..7 {
            let s = driver.step(EgoAction::Idle).unwrap();
            episodes.push((s.episode, s.episode_step));
            if s.outcome.done() {
                assert!(s.episode_step <= 3);
            }
        }
        assert_eq!(episodes[0], (0, 1));
        assert!(episodes.windows(2).all(|w| w[1].0 >= w[0].0));
        assert!(driver.episodes_started() >= 3);
    }
}
