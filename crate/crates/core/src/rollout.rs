//! Runs one episode of a task under an [`Agent`].

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, Episode, Trajectory};
use crate::policy::softmax::Grad;
use crate::policy::{Agent, PolicyError, PolicyInput, PARAM_COUNT};
use crate::synth::SyntheticTask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error("task {task_id}: {error}")]
    Env {
        task_id: String,
        error: EnvError,
    },
    #[error("task {task_id}: {error}")]
    Policy {
        task_id: String,
        error: PolicyError,
    },
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// Policy inputs observed before each step, aligned with `trajectory.steps`.
    pub inputs: Vec<PolicyInput>,
    /// Summed log-probability of the trajectory's actions (softmax agents only).
    pub logprob: Option<f64>,
    /// Summed gradient of the action log-probabilities (softmax agents only).
    pub grad: Option<Grad>,
}

impl Rollout {
    pub fn correct(&self, task: &SyntheticTask) -> bool {
        self.trajectory.predicted_answer == Some(task.correct_option)
    }
}

pub fn run_episode(
    task: &SyntheticTask,
    agent: &Agent,
    config: &EnvConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, RolloutError> {
    let env_err = |error| RolloutError::Env { task_id: task.task_id.clone(), error };
    let policy_err = |error| RolloutError::Policy { task_id: task.task_id.clone(), error };

    let mut episode = Episode::start(&task.task_id, task.frame_count(), task.option_count, config);
    let mut inputs = Vec::new();
    let mut logprob = 0.0;
    let mut grad = [0.0; PARAM_COUNT];
    while !episode.is_done() {
        let input = PolicyInput::build(task, &episode.state, config);
        let action = agent.act(task, &episode.state, &input, config, rng).map_err(policy_err)?;
        if let Agent::Softmax(params) = agent {
            let (lp, g) = params.action_logprob_grad(&input, &action).map_err(policy_err)?;
            logprob += lp;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        episode.apply(action).map_err(env_err)?;
        inputs.push(input);
    }
    let softmax = matches!(agent, Agent::Softmax(_));
    Ok(Rollout {
        trajectory: episode.into_trajectory(),
        inputs,
        logprob: softmax.then_some(logprob),
        grad: softmax.then_some(grad),
    })
}
