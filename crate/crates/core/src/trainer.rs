//! Imitation pretraining and group-rollout policy-gradient training.
//!
//! Each iteration samples a batch of prompts, runs `group_size` episodes per
//! prompt, scores them with the scheduled reward and centres the rewards
//! within each group:
//!
//! ```text
//! A_i = (r_i - mean(r)) / (std(r) + 1e-6)
//! theta <- theta + lr * sum_i A_i * grad log pi(trajectory_i)
//! ```

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvConfig};
use crate::policy::softmax::Grad;
use crate::policy::{Agent, PolicyError, PolicyInput, PolicyParams, PARAM_COUNT};
use crate::reward::{
    score_trajectory, RewardBreakdown, RewardError, RewardOptions, ScheduleConfig, WeightMode, Weights,
};
use crate::rollout::{run_episode, Rollout, RolloutError};
use crate::seeds;
use crate::synth::SyntheticTask;

/// Added to the group standard deviation before dividing.
pub const ADVANTAGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("imitation dataset is empty")]
    EmptyDataset,
    #[error("task suite is empty")]
    EmptySuite,
    #[error("every advantage in the batch is zero; update skipped")]
    DegenerateBatch,
    #[error("update produced non-finite parameters")]
    NonFiniteParams,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Reward ablations. All off is the full reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Zero the relevance weight at every iteration.
    pub disable_relevance: bool,
    /// Replace IoU-gated correctness with plain +1/-1.
    pub disable_iou_gate: bool,
    /// Freeze (alpha, beta) at the midpoint of the early and late pairs.
    pub disable_dynamic_adjustment: bool,
    /// Pay the action reward per selection operation.
    pub per_op_action_reward: bool,
    /// Skip policy-gradient updates (imitation only).
    pub skip_rl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    /// Spread of the uniform perturbation applied to the default parameters.
    pub init_scale: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    /// Oracle trajectories used for imitation pretraining.
    pub pretrain_trajectories: usize,
    /// Episodes per evaluation task.
    pub eval_rollouts: usize,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            prompts_per_batch: 32,
            learning_rate: 0.01,
            temperature: 1.0,
            init_scale: 0.1,
            pretrain_epochs: 40,
            pretrain_learning_rate: 0.5,
            pretrain_trajectories: 500,
            eval_rollouts: 8,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.prompts_per_batch == 0 || self.eval_rollouts == 0 {
            return bad("prompts_per_batch and eval_rollouts must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.pretrain_learning_rate.is_finite() && self.pretrain_learning_rate >= 0.0) {
            return bad("pretrain_learning_rate must be finite and non-negative");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// How trajectories are scored at a given iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub schedule: ScheduleConfig,
    pub mode: WeightMode,
    pub options: RewardOptions,
}

impl RewardModel {
    /// The full reward with the dynamic schedule.
    pub fn full(schedule: &ScheduleConfig) -> Self {
        Self { schedule: schedule.clone(), mode: WeightMode::Dynamic, options: RewardOptions::default() }
    }

    pub fn with_ablation(schedule: &ScheduleConfig, flags: &AblationFlags) -> Self {
        let schedule = if flags.disable_relevance { schedule.without_relevance() } else { schedule.clone() };
        let mode = if flags.disable_dynamic_adjustment {
            WeightMode::Fixed(schedule.midpoint())
        } else {
            WeightMode::Dynamic
        };
        let options = RewardOptions {
            iou_gate: !flags.disable_iou_gate,
            per_op_action_reward: flags.per_op_action_reward,
        };
        Self { schedule, mode, options }
    }

    pub fn weights(&self, iter: usize) -> Weights {
        self.mode.weights(&self.schedule, iter)
    }

    pub fn score(&self, rollout: &Rollout, task: &SyntheticTask, iter: usize) -> Result<RewardBreakdown, RewardError> {
        score_trajectory(&rollout.trajectory, &task.annotation, task.correct_option, self.weights(iter), self.options)
    }
}

/// `group_size` episodes of one prompt with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub correct: Vec<bool>,
}

/// Group-centred, std-normalised advantages; all zero when rewards are equal.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; rewards.len()];
    }
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect()
}

/// Runs `group_size` independent episodes; episode `g` uses the sub-seed
/// `(seed, "rollout", path ++ [g])`.
pub fn collect_group(
    task: &SyntheticTask,
    agent: &Agent,
    env: &EnvConfig,
    reward: &RewardModel,
    iter: usize,
    group_size: usize,
    seed: u64,
    path: &[u64],
) -> Result<RolloutGroup, TrainError> {
    let mut rollouts = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    let mut correct = Vec::with_capacity(group_size);
    for g in 0..group_size as u64 {
        let mut sub = path.to_vec();
        sub.push(g);
        let mut rng = seeds::stream_rng(seed, seeds::ROLLOUT_STREAM, &sub);
        let rollout = run_episode(task, agent, env, &mut rng)?;
        rewards.push(reward.score(&rollout, task, iter)?);
        correct.push(rollout.correct(task));
        rollouts.push(rollout);
    }
    let totals: Vec<f64> = rewards.iter().map(|r| r.r_total).collect();
    Ok(RolloutGroup {
        task_id: task.task_id.clone(),
        rollouts,
        rewards,
        advantages: group_advantages(&totals),
        correct,
    })
}

/// Log-probability of a recorded trajectory and its gradient under `params`.
pub fn trajectory_logprob(params: &PolicyParams, rollout: &Rollout) -> Result<(f64, Grad), PolicyError> {
    let mut lp = 0.0;
    let mut grad = [0.0; PARAM_COUNT];
    for (input, step) in rollout.inputs.iter().zip(&rollout.trajectory.steps) {
        let (l, g) = params.action_logprob_grad(input, &step.action)?;
        lp += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((lp, grad))
}

/// Sum over the batch of `A_i * grad log pi(trajectory_i)`, from stored gradients.
pub fn policy_gradient(groups: &[RolloutGroup]) -> Grad {
    let mut grad = [0.0; PARAM_COUNT];
    for group in groups {
        for (rollout, adv) in group.rollouts.iter().zip(&group.advantages) {
            let g = rollout.grad.expect("policy-gradient batches come from softmax rollouts");
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += adv * gi;
            }
        }
    }
    grad
}

/// One REINFORCE step. Fails with [`TrainError::DegenerateBatch`] when no
/// trajectory carries a nonzero advantage.
pub fn update_policy(params: &PolicyParams, groups: &[RolloutGroup], learning_rate: f64) -> Result<PolicyParams, TrainError> {
    if groups.iter().all(|g| g.advantages.iter().all(|&a| a == 0.0)) {
        return Err(TrainError::DegenerateBatch);
    }
    let grad = policy_gradient(groups);
    let mut next = params.clone();
    for (w, g) in next.weights.iter_mut().zip(grad) {
        *w += learning_rate * g;
    }
    if next.weights.iter().any(|w| !w.is_finite()) {
        return Err(TrainError::NonFiniteParams);
    }
    Ok(next)
}

/// One imitation example: what the policy saw and what the expert did.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub input: PolicyInput,
    pub action: Action,
}

/// Expert steps from oracle rollouts, excluding forced answers.
pub fn demonstrations(rollouts: &[Rollout]) -> Vec<Demonstration> {
    rollouts
        .iter()
        .flat_map(|r| r.inputs.iter().zip(&r.trajectory.steps))
        .filter(|(input, _)| input.selections_remaining > 0)
        .map(|(input, step)| Demonstration { input: input.clone(), action: step.action.clone() })
        .collect()
}

/// Mean negative log-likelihood of the demonstrations and its gradient.
pub fn imitation_loss(params: &PolicyParams, data: &[Demonstration]) -> Result<(f64, Grad), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; PARAM_COUNT];
    for d in data {
        let (lp, g) = params.action_logprob_grad(&d.input, &d.action)?;
        loss -= lp / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a -= b / n;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainStats {
    pub examples: usize,
    pub nll_before: f64,
    pub nll_after: f64,
}

/// Gradient descent on the imitation loss. Steps that would raise the loss
/// are retried with half the step size, so the loss never increases.
pub fn clone_pretrain(
    params: &PolicyParams,
    data: &[Demonstration],
    epochs: usize,
    learning_rate: f64,
) -> Result<(PolicyParams, PretrainStats), TrainError> {
    let (nll_before, mut grad) = imitation_loss(params, data)?;
    let mut current = params.clone();
    let mut loss = nll_before;
    let mut step = learning_rate;
    for _ in 0..epochs {
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = current.clone();
            for (w, g) in cand.weights.iter_mut().zip(grad) {
                *w -= step * g;
            }
            let (cand_loss, cand_grad) = imitation_loss(&cand, data)?;
            if cand_loss.is_finite() && cand_loss < loss {
                current = cand;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 1.5;
    }
    Ok((current, PretrainStats { examples: data.len(), nll_before, nll_after: loss }))
}

/// One row of the training metrics series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_iou: f64,
    pub accuracy: f64,
    pub selection_rate: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Aggregate scores of a policy on a fixed task set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub accuracy: f64,
    pub mean_iou: f64,
    pub mean_reward: f64,
    pub selection_rate: f64,
}

struct Tally {
    n: usize,
    reward: f64,
    iou: f64,
    correct: usize,
    selected: usize,
}

impl Tally {
    fn new() -> Self {
        Self { n: 0, reward: 0.0, iou: 0.0, correct: 0, selected: 0 }
    }

    fn add_group(&mut self, g: &RolloutGroup) {
        for ((r, b), ok) in g.rollouts.iter().zip(&g.rewards).zip(&g.correct) {
            self.n += 1;
            self.reward += b.r_total;
            self.iou += b.iou;
            self.correct += usize::from(*ok);
            self.selected += usize::from(r.trajectory.selection_count() > 0);
        }
    }

    fn summary(&self) -> EvalSummary {
        let n = self.n.max(1) as f64;
        EvalSummary {
            episodes: self.n,
            accuracy: self.correct as f64 / n,
            mean_iou: self.iou / n,
            mean_reward: self.reward / n,
            selection_rate: self.selected as f64 / n,
        }
    }
}

/// Runs `rollouts_per_task` episodes of every task and scores them with `reward` at `iter`.
pub fn evaluate(
    agent: &Agent,
    tasks: &[SyntheticTask],
    env: &EnvConfig,
    reward: &RewardModel,
    iter: usize,
    rollouts_per_task: usize,
    seed: u64,
    path_prefix: u64,
) -> Result<(EvalSummary, Vec<RolloutGroup>), TrainError> {
    let groups = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| collect_group(t, agent, env, reward, iter, rollouts_per_task, seed, &[path_prefix, i as u64]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tally = Tally::new();
    groups.iter().for_each(|g| tally.add_group(g));
    Ok((tally.summary(), groups))
}

/// Everything a training run needs besides the task suites.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetup {
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub env: EnvConfig,
}

/// What one iteration produced; handed to the run observer.
pub struct IterationLog<'a> {
    pub row: MetricsRow,
    pub groups: &'a [RolloutGroup],
    pub params: &'a PolicyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub rows: Vec<MetricsRow>,
    pub initial_params: PolicyParams,
    pub pretrained_params: PolicyParams,
    pub final_params: PolicyParams,
    pub pretrain: Option<PretrainStats>,
    pub skipped_updates: usize,
    /// Final policy scored with the full reward at the last iteration.
    pub eval: EvalSummary,
    pub eval_groups: Vec<RolloutGroup>,
}

/// Path prefixes that keep evaluation and imitation seeds apart from training ones.
const EVAL_PATH: u64 = u64::MAX;
const PRETRAIN_PATH: u64 = u64::MAX - 1;

pub fn initial_params(train: &TrainConfig, seed: u64) -> PolicyParams {
    let mut rng = seeds::stream_rng(seed, seeds::POLICY_INIT_STREAM, &[]);
    let mut p = PolicyParams { temperature: train.temperature, ..PolicyParams::default() };
    if train.init_scale > 0.0 {
        for w in p.weights.iter_mut() {
            *w += rng.gen_range(-train.init_scale..=train.init_scale);
        }
    }
    p
}

/// Imitation pretraining on oracle rollouts over the first tasks of the suite.
pub fn pretrain_on_oracle(
    params: &PolicyParams,
    suite: &[SyntheticTask],
    setup: &TrainingSetup,
    seed: u64,
) -> Result<(PolicyParams, PretrainStats), TrainError> {
    let n = setup.train.pretrain_trajectories;
    let rollouts = (0..n)
        .into_par_iter()
        .map(|i| {
            let task = &suite[i % suite.len()];
            let mut rng = seeds::stream_rng(seed, seeds::ROLLOUT_STREAM, &[PRETRAIN_PATH, i as u64]);
            run_episode(task, &Agent::Oracle, &setup.env, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    clone_pretrain(params, &demonstrations(&rollouts), setup.train.pretrain_epochs, setup.train.pretrain_learning_rate)
}

/// Pretraining followed by `schedule.total_iters` iterations of group rollouts
/// and updates, then a final evaluation. Deterministic in `seed`.
pub fn run_training(
    setup: &TrainingSetup,
    suite: &[SyntheticTask],
    eval_suite: &[SyntheticTask],
    seed: u64,
    mut observer: impl FnMut(&IterationLog<'_>),
) -> Result<TrainingReport, TrainError> {
    if suite.is_empty() || eval_suite.is_empty() {
        return Err(TrainError::EmptySuite);
    }
    setup.train.validate()?;
    setup.schedule.validate()?;
    let cfg = &setup.train;
    let total_iters = setup.schedule.total_iters;
    let reward = RewardModel::with_ablation(&setup.schedule, &cfg.ablation);

    let initial = initial_params(cfg, seed);
    let (pretrained, pretrain) = if cfg.pretrain_epochs > 0 && cfg.pretrain_trajectories > 0 {
        let (p, stats) = pretrain_on_oracle(&initial, suite, setup, seed)?;
        (p, Some(stats))
    } else {
        (initial.clone(), None)
    };

    let mut params = pretrained.clone();
    let mut rows = Vec::with_capacity(total_iters);
    let mut skipped_updates = 0;
    for iter in 1..=total_iters {
        let mut batch_rng = seeds::stream_rng(seed, seeds::BATCH_STREAM, &[iter as u64]);
        let batch: Vec<usize> = if suite.len() >= cfg.prompts_per_batch {
            sample(&mut batch_rng, suite.len(), cfg.prompts_per_batch).into_vec()
        } else {
            (0..cfg.prompts_per_batch).map(|_| batch_rng.gen_range(0..suite.len())).collect()
        };
        let agent = Agent::Softmax(params.clone());
        let groups = batch
            .par_iter()
            .enumerate()
            .map(|(b, &ti)| {
                collect_group(&suite[ti], &agent, &setup.env, &reward, iter, cfg.group_size, seed, &[iter as u64, b as u64])
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut tally = Tally::new();
        groups.iter().for_each(|g| tally.add_group(g));
        let s = tally.summary();
        let w = reward.weights(iter);
        let row = MetricsRow {
            iter,
            mean_reward: s.mean_reward,
            mean_iou: s.mean_iou,
            accuracy: s.accuracy,
            selection_rate: s.selection_rate,
            alpha: w.alpha,
            beta: w.beta,
        };
        observer(&IterationLog { row, groups: &groups, params: &params });
        rows.push(row);

        if !cfg.ablation.skip_rl {
            match update_policy(&params, &groups, cfg.learning_rate) {
                Ok(next) => params = next,
                Err(TrainError::DegenerateBatch) => skipped_updates += 1,
                Err(e) => return Err(e),
            }
        }
    }

    let canonical = RewardModel::full(&setup.schedule);
    let (eval, eval_groups) = evaluate(
        &Agent::Softmax(params.clone()),
        eval_suite,
        &setup.env,
        &canonical,
        total_iters,
        cfg.eval_rollouts,
        seed,
        EVAL_PATH,
    )?;

    Ok(TrainingReport {
        rows,
        initial_params: initial,
        pretrained_params: pretrained,
        final_params: params,
        pretrain,
        skipped_updates,
        eval,
        eval_groups,
    })
}
