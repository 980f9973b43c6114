//! Original frame axis, budgeted uniform pre-sampling and localized re-sampling.
//!
//! Frames are addressed by their index in the original video. A
//! [`VisualContext`] is the sorted set of indices the policy can currently
//! see. Selecting key frames from it replaces the context with frames drawn
//! from the gaps between each key and its nearest visible neighbour.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into the original (un-sampled) video.
pub type FrameIndex = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("timeline needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("signal at frame {index} is {value}, expected a value in [0, 1]")]
    SignalOutOfRange { index: usize, value: f64 },
    #[error("context frames must be strictly increasing and below {frame_count}")]
    InvalidContext { frame_count: usize },
    #[error("context is empty")]
    EmptyContext,
    #[error("interval bounds ({lo}, {hi}) must satisfy lo < hi")]
    InvalidInterval { lo: FrameIndex, hi: FrameIndex },
    #[error("frame {0} is not in the current context")]
    KeyNotInContext(FrameIndex),
    #[error("context has {0} frame(s); at least 2 are needed to form an interval")]
    ContextTooSmall(usize),
    #[error("frame selection is empty")]
    EmptySelection,
    #[error("selected frame {0} is not in the current context")]
    SelectionOutsideContext(FrameIndex),
}

/// The original frame axis of a synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTimeline {
    signals: Vec<f64>,
}

impl VideoTimeline {
    /// Builds a timeline from one observable evidence signal per frame.
    pub fn new(signals: Vec<f64>) -> Result<Self, TimelineError> {
        if signals.len() < 2 {
            return Err(TimelineError::TooFewFrames(signals.len()));
        }
        if let Some((index, &value)) = signals
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TimelineError::SignalOutOfRange { index, value });
        }
        Ok(Self { signals })
    }

    pub fn frame_count(&self) -> usize {
        self.signals.len()
    }

    pub fn signal(&self, frame: FrameIndex) -> f64 {
        self.signals[frame]
    }

    pub fn signals(&self) -> &[f64] {
        &self.signals
    }
}

/// Frames currently visible to the policy, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisualContext {
    frames: Vec<FrameIndex>,
}

impl VisualContext {
    pub fn new(frames: Vec<FrameIndex>, frame_count: usize) -> Result<Self, TimelineError> {
        if frames.is_empty() {
            return Err(TimelineError::EmptyContext);
        }
        let increasing = frames.windows(2).all(|w| w[0] < w[1]);
        if !increasing || frames[frames.len() - 1] >= frame_count {
            return Err(TimelineError::InvalidContext { frame_count });
        }
        Ok(Self { frames })
    }

    /// Callers guarantee the frames are sorted and unique.
    fn from_sorted(frames: Vec<FrameIndex>) -> Self {
        debug_assert!(frames.windows(2).all(|w| w[0] < w[1]));
        Self { frames }
    }

    pub fn frames(&self) -> &[FrameIndex] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn contains(&self, frame: FrameIndex) -> bool {
        self.frames.binary_search(&frame).is_ok()
    }

    pub fn position(&self, frame: FrameIndex) -> Option<usize> {
        self.frames.binary_search(&frame).ok()
    }
}

/// A clip of the original video bounded by two frame indices, `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    lo: FrameIndex,
    hi: FrameIndex,
}

impl Interval {
    pub fn new(lo: FrameIndex, hi: FrameIndex) -> Result<Self, TimelineError> {
        if lo >= hi {
            return Err(TimelineError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> FrameIndex {
        self.lo
    }

    pub fn hi(&self) -> FrameIndex {
        self.hi
    }

    pub fn length(&self) -> usize {
        self.hi - self.lo
    }

    /// Number of frames strictly between the endpoints.
    pub fn interior_capacity(&self) -> usize {
        self.length() - 1
    }

    pub fn contains(&self, frame: FrameIndex) -> bool {
        self.lo <= frame && frame <= self.hi
    }
}

/// Picks `min(budget, frame_count)` frames at `floor(k * M / budget)`.
///
/// # Panics
///
/// Panics if `budget` is zero.
pub fn uniform_sample(frame_count: usize, budget: usize) -> VisualContext {
    assert!(budget >= 1, "sampling budget must be positive");
    if frame_count <= budget {
        return VisualContext::from_sorted((0..frame_count).collect());
    }
    let mut frames: Vec<FrameIndex> = (0..budget).map(|k| k * frame_count / budget).collect();
    frames.dedup();
    VisualContext::from_sorted(frames)
}

/// Interval between `key` and its nearest neighbour in `context`.
///
/// Equidistant neighbours resolve to the later one.
pub fn nearest_neighbor_interval(
    context: &VisualContext,
    key: FrameIndex,
) -> Result<Interval, TimelineError> {
    let frames = context.frames();
    if frames.len() < 2 {
        return Err(TimelineError::ContextTooSmall(frames.len()));
    }
    let pos = context
        .position(key)
        .ok_or(TimelineError::KeyNotInContext(key))?;
    let prev = pos.checked_sub(1).map(|p| frames[p]);
    let next = frames.get(pos + 1).copied();
    let interval = match (prev, next) {
        (Some(p), Some(n)) if key - p < n - key => Interval { lo: p, hi: key },
        (_, Some(n)) => Interval { lo: key, hi: n },
        (Some(p), None) => Interval { lo: p, hi: key },
        (None, None) => unreachable!("context has at least two frames"),
    };
    Ok(interval)
}

/// Merges intervals that share more than an endpoint. Output is sorted.
pub fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort();
    let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.lo < last.hi => last.hi = last.hi.max(iv.hi),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Splits `n_max` sample slots across intervals in proportion to their length.
///
/// Uses the largest-remainder method with each interval capped at its
/// interior capacity. The total is `min(n_max, total capacity)`. When there
/// are at least as many slots as intervals with room, every such interval
/// receives one or more.
pub fn allocate_slots(intervals: &[Interval], n_max: usize) -> Vec<usize> {
    let caps: Vec<usize> = intervals.iter().map(Interval::interior_capacity).collect();
    let total_cap: usize = caps.iter().sum();
    let target = n_max.min(total_cap);
    let mut slots = vec![0usize; intervals.len()];
    let mut assigned = 0usize;

    while assigned < target {
        let active: Vec<usize> = (0..intervals.len()).filter(|&i| slots[i] < caps[i]).collect();
        let remaining = target - assigned;
        let denom: usize = active.iter().map(|&i| intervals[i].length()).sum();

        let mut remainders = Vec::with_capacity(active.len());
        let mut round_total = 0usize;
        for &i in &active {
            let num = remaining * intervals[i].length();
            let grant = (num / denom).min(caps[i] - slots[i]);
            slots[i] += grant;
            round_total += grant;
            remainders.push((num % denom, i));
        }
        // Largest remainder first, earlier interval on ties.
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = remaining - round_total;
        for &(_, i) in &remainders {
            if left == 0 {
                break;
            }
            if slots[i] < caps[i] {
                slots[i] += 1;
                left -= 1;
            }
        }
        assigned = target - left;
    }

    let with_room = caps.iter().filter(|&&c| c > 0).count();
    if target >= with_room {
        for i in 0..slots.len() {
            if caps[i] > 0 && slots[i] == 0 {
                let donor = (0..slots.len())
                    .filter(|&d| slots[d] >= 2)
                    .max_by(|&a, &b| slots[a].cmp(&slots[b]).then(b.cmp(&a)))
                    .expect("target >= intervals with room leaves a donor");
                slots[donor] -= 1;
                slots[i] = 1;
            }
        }
    }
    slots
}

/// `slots` evenly spaced interior frames of `interval`, excluding endpoints.
///
/// Frame `j` sits at `lo + round((j + 1) * L / (slots + 1))`, rounding halves up.
pub fn interior_points(interval: Interval, slots: usize) -> Vec<FrameIndex> {
    let len = interval.length();
    let parts = slots + 1;
    (0..slots)
        .map(|j| interval.lo + (2 * (j + 1) * len + parts) / (2 * parts))
        .collect()
}

/// The intervals, slot allocation and resulting context of one re-sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResamplePlan {
    pub intervals: Vec<Interval>,
    pub slots: Vec<usize>,
    pub context: VisualContext,
}

/// Computes the full re-sampling plan for a frame selection.
pub fn plan_resample(
    context: &VisualContext,
    selected: &BTreeSet<FrameIndex>,
    n_max: usize,
) -> Result<ResamplePlan, TimelineError> {
    if selected.is_empty() {
        return Err(TimelineError::EmptySelection);
    }
    if let Some(&outside) = selected.iter().find(|&&f| !context.contains(f)) {
        return Err(TimelineError::SelectionOutsideContext(outside));
    }
    let raw = selected
        .iter()
        .map(|&key| nearest_neighbor_interval(context, key))
        .collect::<Result<Vec<_>, _>>()?;
    let intervals = merge_intervals(raw);
    let slots = allocate_slots(&intervals, n_max);

    let mut frames: BTreeSet<FrameIndex> = selected.clone();
    for (iv, &s) in intervals.iter().zip(&slots) {
        frames.extend(interior_points(*iv, s));
    }
    Ok(ResamplePlan {
        intervals,
        slots,
        context: VisualContext::from_sorted(frames.into_iter().collect()),
    })
}

/// Replaces the context with frames re-sampled around the selected keys.
pub fn localized_resample(
    context: &VisualContext,
    selected: &BTreeSet<FrameIndex>,
    n_max: usize,
) -> Result<VisualContext, TimelineError> {
    plan_resample(context, selected, n_max).map(|plan| plan.context)
}
