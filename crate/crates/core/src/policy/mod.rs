//! Policies that drive episodes: a random baseline, a privileged oracle and
//! a learnable softmax selection policy.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{observe, Action, EnvConfig, EpisodeState};
use crate::synth::{answer_oracle, SyntheticTask};
use crate::timeline::FrameIndex;

pub mod oracle;
pub mod random;
pub mod softmax;

pub use oracle::act_oracle;
pub use random::RandomPolicy;
pub use softmax::{PolicyParams, PARAM_COUNT};

/// Most frames any policy selects in one operation.
pub const MAX_FRAMES_PER_SELECTION: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("observation is empty")]
    EmptyObservation,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("policy weights must be finite")]
    NonFiniteWeights,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// What a non-privileged policy sees when it acts.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    /// `(frame index, signal)` for each frame of the current context.
    pub observation: Vec<(FrameIndex, f64)>,
    pub selections_used: usize,
    pub selections_remaining: usize,
    pub option_count: usize,
    /// The answer the reasoner would give if asked now.
    pub proposed_answer: usize,
}

impl PolicyInput {
    pub fn build(task: &SyntheticTask, state: &EpisodeState, config: &EnvConfig) -> Self {
        Self {
            observation: observe(state, &task.timeline),
            selections_used: state.selections_used,
            selections_remaining: state.selections_remaining(config),
            option_count: task.option_count,
            proposed_answer: answer_oracle(task, &state.context),
        }
    }
}

/// A policy usable by the rollout runner.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Random(RandomPolicy),
    Oracle,
    Softmax(PolicyParams),
}

impl Agent {
    pub fn act(
        &self,
        task: &SyntheticTask,
        state: &EpisodeState,
        input: &PolicyInput,
        config: &EnvConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action, PolicyError> {
        match self {
            Agent::Random(p) => Ok(p.act(input, rng)),
            Agent::Oracle => Ok(act_oracle(task, state, config)),
            Agent::Softmax(params) => params.act(input, rng),
        }
    }
}
