//! Evidence-aware reward: action, relevance (frame IoU) and IoU-gated correctness.
//!
//! The total for a finished trajectory is
//!
//! ```text
//! r_total = r_correct + alpha(t) * r_action + beta(t) * r_relevance
//! ```
//!
//! where `alpha(t)` and `beta(t)` come from the [`schedule`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Trajectory;
use crate::timeline::FrameIndex;

pub mod schedule;

pub use schedule::{schedule_weights, ScheduleConfig, WeightMode, Weights};

/// Largest golden set an annotation may carry.
pub const MAX_GOLD_FRAMES: usize = 8;
/// IoU at or above which a correct answer earns the full reward.
pub const IOU_GATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("trajectory has not terminated")]
    NonTerminalTrajectory,
    #[error("golden annotation has {0} frames; expected 1 to 8")]
    AnnotationSize(usize),
    #[error("golden frame {frame} is outside a video of {frame_count} frames")]
    AnnotationOutOfRange { frame: FrameIndex, frame_count: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Ground-truth evidence frames for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenAnnotation {
    gold_frames: BTreeSet<FrameIndex>,
    tolerance: usize,
}

impl GoldenAnnotation {
    pub fn new(gold_frames: BTreeSet<FrameIndex>, tolerance: usize) -> Result<Self, RewardError> {
        if gold_frames.is_empty() || gold_frames.len() > MAX_GOLD_FRAMES {
            return Err(RewardError::AnnotationSize(gold_frames.len()));
        }
        Ok(Self { gold_frames, tolerance })
    }

    pub fn gold_frames(&self) -> &BTreeSet<FrameIndex> {
        &self.gold_frames
    }

    /// Match window in original-frame units.
    pub fn tolerance(&self) -> usize {
        self.tolerance
    }

    pub fn check_bounds(&self, frame_count: usize) -> Result<(), RewardError> {
        match self.gold_frames.iter().find(|&&f| f >= frame_count) {
            Some(&frame) => Err(RewardError::AnnotationOutOfRange { frame, frame_count }),
            None => Ok(()),
        }
    }
}

/// Greedy one-to-one matches within the tolerance window, in index order.
pub fn matched_count(selected: &BTreeSet<FrameIndex>, annotation: &GoldenAnnotation) -> usize {
    let w = annotation.tolerance;
    let gold: Vec<FrameIndex> = annotation.gold_frames.iter().copied().collect();
    let mut next_gold = 0;
    let mut matched = 0;
    for &s in selected {
        while next_gold < gold.len() && gold[next_gold] + w < s {
            next_gold += 1;
        }
        if next_gold < gold.len() && gold[next_gold] <= s + w {
            matched += 1;
            next_gold += 1;
        }
    }
    matched
}

/// Overlap between selected and golden frames; plain set IoU at tolerance 0.
pub fn frame_iou(selected: &BTreeSet<FrameIndex>, annotation: &GoldenAnnotation) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let matched = matched_count(selected, annotation);
    let union = selected.len() + annotation.gold_frames.len() - matched;
    matched as f64 / union as f64
}

/// 1 when any frame selection happened, else 0.
pub fn action_reward(trajectory_had_selection: bool) -> f64 {
    if trajectory_had_selection {
        1.0
    } else {
        0.0
    }
}

pub fn relevance_reward(iou: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&iou));
    iou
}

/// 1 for a correct answer backed by IoU >= 0.5, 0.5 for a correct answer
/// without it, -1 for a wrong answer.
pub fn correctness_reward(answer_correct: bool, iou: f64) -> f64 {
    match (answer_correct, iou >= IOU_GATE) {
        (true, true) => 1.0,
        (true, false) => 0.5,
        (false, _) => -1.0,
    }
}

/// Ungated correctness: 1 or -1.
pub fn binary_correctness_reward(answer_correct: bool) -> f64 {
    if answer_correct {
        1.0
    } else {
        -1.0
    }
}

/// Reward components for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub iou: f64,
    pub r_action: f64,
    pub r_relevance: f64,
    pub r_correct: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    pub fn compose(iou: f64, r_action: f64, r_relevance: f64, r_correct: f64, weights: Weights) -> Self {
        let r_total = combine(r_correct, r_action, r_relevance, weights);
        Self {
            iou,
            r_action,
            r_relevance,
            r_correct,
            alpha: weights.alpha,
            beta: weights.beta,
            r_total,
        }
    }

    /// `r_total - (r_correct + alpha * r_action + beta * r_relevance)`; always 0.
    pub fn recomposition_error(&self) -> f64 {
        self.r_total
            - combine(
                self.r_correct,
                self.r_action,
                self.r_relevance,
                Weights { alpha: self.alpha, beta: self.beta },
            )
    }
}

fn combine(r_correct: f64, r_action: f64, r_relevance: f64, w: Weights) -> f64 {
    r_correct + w.alpha * r_action + w.beta * r_relevance
}

/// Reward variants used by the ablations. The default is the full reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOptions {
    /// Gate full correctness credit on IoU >= 0.5.
    pub iou_gate: bool,
    /// Pay the action reward once per selection operation instead of once.
    pub per_op_action_reward: bool,
}

impl Default for RewardOptions {
    fn default() -> Self {
        Self { iou_gate: true, per_op_action_reward: false }
    }
}

/// Scores a finished trajectory against its golden annotation.
pub fn score_trajectory(
    trajectory: &Trajectory,
    annotation: &GoldenAnnotation,
    correct_option: usize,
    weights: Weights,
    options: RewardOptions,
) -> Result<RewardBreakdown, RewardError> {
    if !trajectory.terminated {
        return Err(RewardError::NonTerminalTrajectory);
    }
    let iou = frame_iou(&trajectory.selected_union(), annotation);
    let selections = trajectory.selection_count();
    let r_action = if options.per_op_action_reward {
        selections as f64
    } else {
        action_reward(selections > 0)
    };
    let correct = trajectory.predicted_answer == Some(correct_option);
    let r_correct = if options.iou_gate {
        correctness_reward(correct, iou)
    } else {
        binary_correctness_reward(correct)
    };
    Ok(RewardBreakdown::compose(iou, r_action, relevance_reward(iou), r_correct, weights))
}

/// Full reward at training iteration `iter` under the dynamic schedule.
pub fn total_reward(
    trajectory: &Trajectory,
    annotation: &GoldenAnnotation,
    correct_option: usize,
    config: &ScheduleConfig,
    iter: usize,
) -> Result<RewardBreakdown, RewardError> {
    score_trajectory(
        trajectory,
        annotation,
        correct_option,
        schedule_weights(config, iter),
        RewardOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, StepRecord};

    fn ann(frames: &[usize], w: usize) -> GoldenAnnotation {
        GoldenAnnotation::new(frames.iter().copied().collect(), w).unwrap()
    }

    fn set(frames: &[usize]) -> BTreeSet<usize> {
        frames.iter().copied().collect()
    }

    fn traj(selections: &[&[usize]], answer: Option<usize>) -> Trajectory {
        let mut t = Trajectory::new("t");
        for s in selections {
            t.steps.push(StepRecord { action: Action::select(s.iter().copied()), context_size: 10 });
        }
        if let Some(a) = answer {
            t.steps.push(StepRecord { action: Action::answer(a), context_size: 10 });
        }
        t.predicted_answer = answer;
        t.terminated = true;
        t
    }

    #[test]
    fn iou_examples() {
        assert_eq!(frame_iou(&set(&[3, 7]), &ann(&[3, 7], 0)), 1.0);
        assert_eq!(frame_iou(&set(&[]), &ann(&[5], 0)), 0.0);
        assert_eq!(frame_iou(&set(&[2, 5, 9]), &ann(&[5, 9, 12, 14], 0)), 0.4);
        assert_eq!(frame_iou(&set(&[24]), &ann(&[25], 2)), 1.0);
        assert_eq!(frame_iou(&set(&[24]), &ann(&[25], 0)), 0.0);
    }

    #[test]
    fn tolerance_matching_is_one_to_one() {
        // Two selections near one golden frame: only one may match.
        assert_eq!(matched_count(&set(&[10, 11]), &ann(&[10], 2)), 1);
        assert_eq!(matched_count(&set(&[10]), &ann(&[9, 11], 2)), 1);
        // Greedy in index order pairs 8<->9 and 12<->11.
        assert_eq!(matched_count(&set(&[8, 12]), &ann(&[9, 11], 1)), 2);
    }

    #[test]
    fn action_reward_is_binary() {
        assert_eq!(action_reward(true), 1.0);
        assert_eq!(action_reward(false), 0.0);
        let two = traj(&[&[1], &[2]], Some(0));
        let b = score_trajectory(&two, &ann(&[1], 0), 0, Weights { alpha: 1.0, beta: 0.0 }, RewardOptions::default())
            .unwrap();
        assert_eq!(b.r_action, 1.0);
        let per_op = RewardOptions { per_op_action_reward: true, ..RewardOptions::default() };
        let b = score_trajectory(&two, &ann(&[1], 0), 0, Weights { alpha: 1.0, beta: 0.0 }, per_op).unwrap();
        assert_eq!(b.r_action, 2.0);
    }

    #[test]
    fn relevance_is_identity() {
        for v in [0.0, 0.4, 1.0] {
            assert_eq!(relevance_reward(v), v);
        }
    }

    #[test]
    fn correctness_table() {
        assert_eq!(correctness_reward(true, 0.6), 1.0);
        assert_eq!(correctness_reward(true, 0.4), 0.5);
        assert_eq!(correctness_reward(false, 0.9), -1.0);
        assert_eq!(correctness_reward(true, 0.5), 1.0);
    }

    #[test]
    fn total_reward_examples() {
        let w = Weights { alpha: 0.2, beta: 0.5 };
        // iou 0.4: selected {2,5,9} vs gold {5,9,12,14}
        let t = traj(&[&[2, 5, 9]], Some(1));
        let b = score_trajectory(&t, &ann(&[5, 9, 12, 14], 0), 1, w, RewardOptions::default()).unwrap();
        assert_eq!(b.iou, 0.4);
        assert!((b.r_total - 0.9).abs() < 1e-12);
        assert_eq!(b.recomposition_error(), 0.0);

        let t = traj(&[], Some(0));
        let b = score_trajectory(&t, &ann(&[5], 0), 1, w, RewardOptions::default()).unwrap();
        assert_eq!(b.r_total, -1.0);

        let t = traj(&[&[5]], Some(1));
        let b = score_trajectory(&t, &ann(&[5], 0), 1, Weights { alpha: 0.0, beta: 1.0 }, RewardOptions::default())
            .unwrap();
        assert_eq!(b.r_total, 2.0);
    }

    #[test]
    fn union_across_rounds() {
        let t = traj(&[&[5], &[9]], Some(0));
        let b = score_trajectory(&t, &ann(&[5, 9], 0), 0, Weights { alpha: 0.0, beta: 0.0 }, RewardOptions::default())
            .unwrap();
        assert_eq!(b.iou, 1.0);
        assert_eq!(b.r_correct, 1.0);
    }

    #[test]
    fn selection_free_correct_answer_earns_half() {
        let t = traj(&[], Some(0));
        let b = total_reward(&t, &ann(&[5], 0), 0, &ScheduleConfig::default(), 0).unwrap();
        assert_eq!(b.r_correct, 0.5);
        assert_eq!(b.r_action, 0.0);
    }

    #[test]
    fn ungated_correctness() {
        let t = traj(&[&[1]], Some(0));
        let opts = RewardOptions { iou_gate: false, ..RewardOptions::default() };
        let b = score_trajectory(&t, &ann(&[40], 0), 0, Weights { alpha: 0.0, beta: 0.0 }, opts).unwrap();
        assert_eq!(b.r_correct, 1.0);
        let t = traj(&[&[1]], Some(2));
        let b = score_trajectory(&t, &ann(&[40], 0), 0, Weights { alpha: 0.0, beta: 0.0 }, opts).unwrap();
        assert_eq!(b.r_correct, -1.0);
    }

    #[test]
    fn non_terminal_is_rejected() {
        let mut t = traj(&[&[1]], None);
        t.terminated = false;
        assert_eq!(
            total_reward(&t, &ann(&[1], 0), 0, &ScheduleConfig::default(), 0),
            Err(RewardError::NonTerminalTrajectory)
        );
    }

    #[test]
    fn annotation_size_limits() {
        assert_eq!(GoldenAnnotation::new(BTreeSet::new(), 0), Err(RewardError::AnnotationSize(0)));
        assert_eq!(GoldenAnnotation::new((0..9).collect(), 0), Err(RewardError::AnnotationSize(9)));
        assert!(GoldenAnnotation::new((0..8).collect(), 0).is_ok());
        assert!(ann(&[3, 99], 0).check_bounds(99).is_err());
        assert!(ann(&[3, 98], 0).check_bounds(99).is_ok());
    }
}
