//! Privileged search for frame selections that reveal hidden evidence.
//!
//! Used by the oracle policy and by the task generator to guarantee that
//! every generated task can be solved within the selection budget.

use std::collections::BTreeSet;

use crate::timeline::{localized_resample, nearest_neighbor_interval, FrameIndex, VisualContext};

/// What counts as having seen the evidence.
#[derive(Debug, Clone, Copy)]
pub struct RevealGoal<'a> {
    pub evidence: &'a BTreeSet<FrameIndex>,
    /// A context frame within this distance reveals an evidence frame.
    pub reveal_radius: usize,
    /// Fraction of evidence that must be revealed.
    pub required_coverage: f64,
}

/// Search limits.
#[derive(Debug, Clone, Copy)]
pub struct SearchLimits {
    pub n_max: usize,
    pub max_keys: usize,
}

/// The context frame closest to `target` within `radius`, if any.
pub fn revealing_frame(context: &VisualContext, target: FrameIndex, radius: usize) -> Option<FrameIndex> {
    let frames = context.frames();
    let pos = frames.partition_point(|&f| f < target);
    let after = frames.get(pos).copied();
    let before = pos.checked_sub(1).map(|p| frames[p]);
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if target - b < a - target {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    (best.abs_diff(target) <= radius).then_some(best)
}

/// Number of evidence frames revealed by `context`.
pub fn revealed_count(context: &VisualContext, goal: &RevealGoal<'_>) -> usize {
    goal.evidence
        .iter()
        .filter(|&&e| revealing_frame(context, e, goal.reveal_radius).is_some())
        .count()
}

pub fn revealed_fraction(context: &VisualContext, goal: &RevealGoal<'_>) -> f64 {
    if goal.evidence.is_empty() {
        return 1.0;
    }
    revealed_count(context, goal) as f64 / goal.evidence.len() as f64
}

pub fn is_satisfied(context: &VisualContext, goal: &RevealGoal<'_>) -> bool {
    revealed_fraction(context, goal) >= goal.required_coverage
}

/// Context frames whose re-sampling interval strictly contains `target`.
fn covering_keys(context: &VisualContext, target: FrameIndex) -> Vec<FrameIndex> {
    let frames = context.frames();
    let pos = frames.partition_point(|&f| f < target);
    let mut keys = Vec::with_capacity(2);
    let neighbours = [pos.checked_sub(1).map(|p| frames[p]), frames.get(pos).copied()];
    for key in neighbours.into_iter().flatten() {
        if let Ok(iv) = nearest_neighbor_interval(context, key) {
            if iv.lo() < target && target < iv.hi() {
                keys.push(key);
            }
        }
    }
    keys
}

/// Candidate key sets for one selection round, smallest first.
fn candidate_selections(
    context: &VisualContext,
    goal: &RevealGoal<'_>,
    max_keys: usize,
) -> Vec<BTreeSet<FrameIndex>> {
    let mut options: Vec<Vec<FrameIndex>> = Vec::new();
    for &e in goal.evidence {
        match revealing_frame(context, e, goal.reveal_radius) {
            Some(f) => options.push(vec![f]),
            None => {
                let keys = covering_keys(context, e);
                if !keys.is_empty() {
                    options.push(keys);
                }
            }
        }
    }
    let mut combos: Vec<BTreeSet<FrameIndex>> = vec![BTreeSet::new()];
    for opts in &options {
        let mut next = Vec::with_capacity(combos.len() * opts.len());
        for base in &combos {
            for &k in opts {
                let mut s = base.clone();
                s.insert(k);
                if s.len() <= max_keys {
                    next.push(s);
                }
            }
        }
        combos = next;
    }
    combos.retain(|s| !s.is_empty());
    combos.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    combos.dedup();
    combos
}

/// Finds at most `rounds` selections after which the goal is satisfied.
///
/// Returns an empty plan when the context already satisfies the goal and
/// `None` when the search finds no plan. Plans that finish in fewer rounds
/// are preferred.
pub fn plan_reveal(
    context: &VisualContext,
    goal: &RevealGoal<'_>,
    rounds: usize,
    limits: SearchLimits,
) -> Option<Vec<BTreeSet<FrameIndex>>> {
    if is_satisfied(context, goal) {
        return Some(Vec::new());
    }
    if rounds == 0 || context.len() < 2 {
        return None;
    }
    let candidates = candidate_selections(context, goal, limits.max_keys);
    let mut outcomes = Vec::with_capacity(candidates.len());
    for sel in candidates {
        let Ok(next) = localized_resample(context, &sel, limits.n_max) else {
            continue;
        };
        if is_satisfied(&next, goal) {
            return Some(vec![sel]);
        }
        outcomes.push((sel, next));
    }
    for (sel, next) in outcomes {
        if let Some(rest) = plan_reveal(&next, goal, rounds - 1, limits) {
            let mut plan = vec![sel];
            plan.extend(rest);
            return Some(plan);
        }
    }
    None
}
