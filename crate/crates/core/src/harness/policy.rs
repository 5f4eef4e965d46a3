use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointKind};
use crate::env::{EgoAction, Observation, RoadConfig};
use crate::nn::{argmax, Mlp, NnError, ParameterSet};
use crate::rules::{RuleAgent, RuleParams};

use super::config::AgentKind;

const RANDOM_POLICY_SALT: u64 = 0x0005_EED0_FAC7;

/// Deterministic acting policy used for evaluation and trajectory export.
/// Learned agents act greedily.
#[derive(Debug, Clone)]
pub enum EvalPolicy {
    Greedy { mlp: Mlp, params: ParameterSet },
    Rules(RuleAgent),
    Random(ChaCha8Rng),
}

pub fn checkpoint_kind(agent: AgentKind) -> CheckpointKind {
    match agent {
        AgentKind::Dqn => CheckpointKind::Dqn,
        AgentKind::Ppo => CheckpointKind::Ppo,
        AgentKind::Rules => CheckpointKind::Rules,
        AgentKind::Random => CheckpointKind::Random,
    }
}

impl EvalPolicy {
    pub fn rules(params: RuleParams, road: RoadConfig) -> Self {
        EvalPolicy::Rules(RuleAgent::new(params, road))
    }

    pub fn random() -> Self {
        EvalPolicy::Random(ChaCha8Rng::seed_from_u64(RANDOM_POLICY_SALT))
    }

    /// Build the policy for `agent`. Learned agents need a checkpoint; for
    /// the others a checkpoint is optional but must be of the right kind.
    pub fn load(
        agent: AgentKind,
        checkpoint: Option<&Checkpoint>,
        rules: RuleParams,
        road: RoadConfig,
    ) -> Result<Self, CheckpointError> {
        if let Some(ck) = checkpoint {
            ck.expect_kind(checkpoint_kind(agent))?;
        }
        let greedy = |name: &str| -> Result<Self, CheckpointError> {
            let ck = checkpoint.ok_or(CheckpointError::MissingSection(name.to_string()))?;
            let section = ck.section(name)?;
            let mlp = Mlp::new(section.spec.clone()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            Ok(EvalPolicy::Greedy {
                mlp,
                params: section.params.clone(),
            })
        };
        match agent {
            AgentKind::Dqn => greedy("q"),
            AgentKind::Ppo => greedy("policy"),
            AgentKind::Rules => Ok(Self::rules(rules, road)),
            AgentKind::Random => Ok(Self::random()),
        }
    }

    /// Reset per-episode state; the random policy reseeds from the episode
    /// seed so every episode is reproducible on its own.
    pub fn begin_episode(&mut self, episode_seed: u64) {
        match self {
            EvalPolicy::Greedy { .. } => {}
            EvalPolicy::Rules(agent) => agent.reset(),
            EvalPolicy::Random(rng) => *rng = ChaCha8Rng::seed_from_u64(episode_seed ^ RANDOM_POLICY_SALT),
        }
    }

    pub fn act(&mut self, obs: &Observation) -> Result<EgoAction, NnError> {
        let index = match self {
            EvalPolicy::Greedy { mlp, params } => argmax(&mlp.forward(&params.values, obs.as_slice())?),
            EvalPolicy::Rules(agent) => return Ok(agent.act(obs)),
            EvalPolicy::Random(rng) => rng.gen_range(0..EgoAction::COUNT),
        };
        EgoAction::from_index(index).ok_or(NnError::Dimension {
            what: "policy output",
            expected: EgoAction::COUNT,
            got: index + 1,
        })
    }
}
