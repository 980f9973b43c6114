//! Episode state machine for evidence-seeking frame selection.
//!
//! An episode starts from a uniformly pre-sampled context. Each step the
//! policy either reasons (a no-op marker here), selects key frames, which
//! triggers localized re-sampling and replaces the context, or answers.
//! At most [`EnvConfig::max_selections`] selection operations are allowed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::{
    localized_resample, uniform_sample, FrameIndex, TimelineError, VideoTimeline, VisualContext,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("episode already terminated")]
    StepOnTerminalState,
    #[error("selection budget of {0} operation(s) exhausted")]
    SelectionBudgetExhausted(usize),
    #[error("selected frame {0} is not in the current context")]
    SelectionOutsideContext(FrameIndex),
    #[error("frame selection is empty")]
    EmptySelection,
    #[error("answer {choice} is out of range for {option_count} options")]
    InvalidAnswer { choice: usize, option_count: usize },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// Episode limits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Frames in the initial uniformly sampled context.
    pub initial_budget: usize,
    /// Frames re-sampled per selection operation.
    pub n_max: usize,
    /// Actions allowed before the episode is cut off unanswered.
    pub max_steps: usize,
    /// Selection operations allowed per episode.
    pub max_selections: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { initial_budget: 32, n_max: 16, max_steps: 8, max_selections: 2 }
    }
}

/// One policy decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    TextStep,
    SelectFrames { frames: BTreeSet<FrameIndex> },
    Answer { choice: usize },
}

impl Action {
    pub fn select<I: IntoIterator<Item = FrameIndex>>(frames: I) -> Self {
        Action::SelectFrames { frames: frames.into_iter().collect() }
    }

    pub fn answer(choice: usize) -> Self {
        Action::Answer { choice }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeState {
    pub context: VisualContext,
    pub selections_used: usize,
    pub selected_union: BTreeSet<FrameIndex>,
    pub terminal: bool,
    pub step_count: usize,
    pub predicted_answer: Option<usize>,
}

/// Fresh episode over a video of `frame_count` frames.
pub fn reset(frame_count: usize, config: &EnvConfig) -> EpisodeState {
    EpisodeState {
        context: uniform_sample(frame_count, config.initial_budget),
        selections_used: 0,
        selected_union: BTreeSet::new(),
        terminal: false,
        step_count: 0,
        predicted_answer: None,
    }
}

impl EpisodeState {
    pub fn selections_remaining(&self, config: &EnvConfig) -> usize {
        config.max_selections.saturating_sub(self.selections_used)
    }

    /// Applies `action` and returns the successor state; `self` is untouched.
    pub fn step(
        &self,
        action: &Action,
        config: &EnvConfig,
        option_count: usize,
    ) -> Result<EpisodeState, EnvError> {
        if self.terminal {
            return Err(EnvError::StepOnTerminalState);
        }
        let mut next = self.clone();
        match action {
            Action::TextStep => {}
            Action::SelectFrames { frames } => {
                if self.selections_used >= config.max_selections {
                    return Err(EnvError::SelectionBudgetExhausted(config.max_selections));
                }
                if frames.is_empty() {
                    return Err(EnvError::EmptySelection);
                }
                if let Some(&f) = frames.iter().find(|&&f| !self.context.contains(f)) {
                    return Err(EnvError::SelectionOutsideContext(f));
                }
                next.context = localized_resample(&self.context, frames, config.n_max)?;
                next.selections_used += 1;
                next.selected_union.extend(frames.iter().copied());
            }
            Action::Answer { choice } => {
                if *choice >= option_count {
                    return Err(EnvError::InvalidAnswer { choice: *choice, option_count });
                }
                next.predicted_answer = Some(*choice);
                next.terminal = true;
            }
        }
        next.step_count += 1;
        if !next.terminal && next.step_count >= config.max_steps {
            next.terminal = true;
        }
        Ok(next)
    }
}

/// Index and signal of every frame in the current context.
pub fn observe(state: &EpisodeState, timeline: &VideoTimeline) -> Vec<(FrameIndex, f64)> {
    state
        .context
        .frames()
        .iter()
        .map(|&f| (f, timeline.signal(f)))
        .collect()
}

/// An applied action together with the context size it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub action: Action,
    pub context_size: usize,
}

/// Everything one episode produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub predicted_answer: Option<usize>,
    pub terminated: bool,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), steps: Vec::new(), predicted_answer: None, terminated: false }
    }

    /// Union of all frames selected across rounds.
    pub fn selected_union(&self) -> BTreeSet<FrameIndex> {
        self.steps
            .iter()
            .filter_map(|s| match &s.action {
                Action::SelectFrames { frames } => Some(frames.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn selection_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, Action::SelectFrames { .. }))
            .count()
    }
}

/// Steps an episode while recording its trajectory.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: EpisodeState,
    pub trajectory: Trajectory,
    config: EnvConfig,
    option_count: usize,
}

impl Episode {
    pub fn start(task_id: &str, frame_count: usize, option_count: usize, config: &EnvConfig) -> Self {
        Self {
            state: reset(frame_count, config),
            trajectory: Trajectory::new(task_id),
            config: config.clone(),
            option_count,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn apply(&mut self, action: Action) -> Result<(), EnvError> {
        let next = self.state.step(&action, &self.config, self.option_count)?;
        self.trajectory.steps.push(StepRecord { action, context_size: next.context.len() });
        self.trajectory.predicted_answer = next.predicted_answer;
        self.trajectory.terminated = next.terminal;
        self.state = next;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.terminal
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn reset_examples() {
        let s = reset(512, &cfg());
        assert_eq!(s.context.len(), 32);
        assert_eq!(s.context.frames()[0], 0);
        assert_eq!(s.selections_used, 0);
        assert!(!s.terminal);
        assert_eq!(reset(16, &cfg()).context.len(), 16);
        assert_eq!(reset(512, &cfg()), reset(512, &cfg()));
    }

    #[test]
    fn selection_replaces_context_and_counts() {
        let s = reset(512, &cfg());
        let s1 = s.step(&Action::select([16]), &cfg(), 4).unwrap();
        assert_eq!(s1.selections_used, 1);
        assert_ne!(s1.context, s.context);
        assert_eq!(s1.context.frames(), &(16..32).collect::<Vec<_>>()[..]);
        assert_eq!(s1.selected_union, BTreeSet::from([16]));
        // the original state is untouched
        assert_eq!(s.selections_used, 0);
    }

    #[test]
    fn third_selection_is_rejected() {
        let mut s = reset(512, &cfg());
        for _ in 0..2 {
            let key = s.context.frames()[0];
            s = s.step(&Action::select([key]), &cfg(), 4).unwrap();
        }
        let key = s.context.frames()[0];
        assert_eq!(
            s.step(&Action::select([key]), &cfg(), 4),
            Err(EnvError::SelectionBudgetExhausted(2))
        );
    }

    #[test]
    fn answer_terminates() {
        let s = reset(512, &cfg()).step(&Action::answer(2), &cfg(), 4).unwrap();
        assert!(s.terminal);
        assert_eq!(s.predicted_answer, Some(2));
        assert_eq!(s.step(&Action::TextStep, &cfg(), 4), Err(EnvError::StepOnTerminalState));
    }

    #[test]
    fn invalid_actions() {
        let s = reset(512, &cfg());
        assert_eq!(s.step(&Action::select([3]), &cfg(), 4), Err(EnvError::SelectionOutsideContext(3)));
        assert_eq!(s.step(&Action::select([]), &cfg(), 4), Err(EnvError::EmptySelection));
        assert_eq!(
            s.step(&Action::answer(4), &cfg(), 4),
            Err(EnvError::InvalidAnswer { choice: 4, option_count: 4 })
        );
    }

    #[test]
    fn step_budget_ends_episode_unanswered() {
        let c = EnvConfig { max_steps: 3, ..cfg() };
        let mut s = reset(512, &c);
        for _ in 0..3 {
            assert!(!s.terminal);
            s = s.step(&Action::TextStep, &c, 4).unwrap();
        }
        assert!(s.terminal);
        assert_eq!(s.predicted_answer, None);
        assert_eq!(s.step_count, 3);
    }

    #[test]
    fn observe_reads_signals_of_context() {
        let mut signals = vec![0.0; 50];
        signals[0] = 0.1;
        signals[25] = 0.9;
        let tl = VideoTimeline::new(signals).unwrap();
        let c = EnvConfig { initial_budget: 2, ..cfg() };
        let s = reset(50, &c);
        assert_eq!(observe(&s, &tl), vec![(0, 0.1), (25, 0.9)]);
    }

    #[test]
    fn trajectory_json_shape() {
        let mut ep = Episode::start("t1", 512, 4, &cfg());
        ep.apply(Action::TextStep).unwrap();
        ep.apply(Action::select([16, 32])).unwrap();
        ep.apply(Action::answer(1)).unwrap();
        let traj = ep.into_trajectory();
        let line = serde_json::to_string(&traj).unwrap();
        assert!(line.contains(r#"{"action":"select_frames","frames":[16,32],"context_size":"#));
        let back: Trajectory = serde_json::from_str(&line).unwrap();
        assert_eq!(back, traj);
        assert_eq!(serde_json::to_string(&back).unwrap(), line);
        assert_eq!(traj.selected_union(), BTreeSet::from([16, 32]));
        assert_eq!(traj.selection_count(), 1);
        assert!(traj.terminated);
    }
}
