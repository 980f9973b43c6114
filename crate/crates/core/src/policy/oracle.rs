//! Privileged policy that reads the hidden evidence.
//!
//! While evidence is unrevealed it follows the shortest reveal plan that
//! fits the remaining budget. Once everything is visible it spends a spare
//! selection on the exact evidence frames (keeping them in context and
//! raising IoU) and then answers.

use std::collections::BTreeSet;

use super::MAX_FRAMES_PER_SELECTION;
use crate::env::{Action, EnvConfig, EpisodeState};
use crate::planner::{is_satisfied, plan_reveal, revealing_frame, SearchLimits};
use crate::synth::{answer_oracle, SyntheticTask};
use crate::timeline::{localized_resample, FrameIndex};

pub fn act_oracle(task: &SyntheticTask, state: &EpisodeState, config: &EnvConfig) -> Action {
    let answer = Action::answer(answer_oracle(task, &state.context));
    let remaining = state.selections_remaining(config);
    if remaining == 0 || state.context.len() < 2 {
        return answer;
    }
    let goal = task.reveal_goal();

    if is_satisfied(&state.context, &goal) {
        let present: BTreeSet<FrameIndex> =
            task.evidence.iter().copied().filter(|&e| state.context.contains(e)).collect();
        let adds_purity = !present.is_empty() && !present.is_subset(&state.selected_union);
        if adds_purity && present.len() <= MAX_FRAMES_PER_SELECTION {
            let keeps_evidence = localized_resample(&state.context, &present, config.n_max)
                .is_ok_and(|next| is_satisfied(&next, &goal));
            if keeps_evidence {
                return Action::SelectFrames { frames: present };
            }
        }
        return answer;
    }

    let limits = SearchLimits { n_max: config.n_max, max_keys: MAX_FRAMES_PER_SELECTION };
    if let Some(plan) = plan_reveal(&state.context, &goal, remaining, limits) {
        if let Some(first) = plan.into_iter().next() {
            return Action::SelectFrames { frames: first };
        }
    }

    // No plan fits: move toward the evidence anyway.
    let nearest: BTreeSet<FrameIndex> = task
        .evidence
        .iter()
        .filter_map(|&e| revealing_frame(&state.context, e, usize::MAX))
        .take(MAX_FRAMES_PER_SELECTION)
        .collect();
    if nearest.is_empty() {
        answer
    } else {
        Action::SelectFrames { frames: nearest }
    }
}
