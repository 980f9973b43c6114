//! Synthetic video-reasoning tasks with planted golden evidence.
//!
//! Evidence frames are placed strictly inside gaps of the initial sampling
//! grid, at least two frames from any grid point, so they can only be seen
//! after localized re-sampling. Each frame carries an observable signal: a
//! Gaussian bump around the nearest evidence frame plus uniform noise.
//! Whether the answer comes out right depends only on which evidence frames
//! end up in the final context.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{read_jsonl, write_jsonl, FormatError};
use crate::planner::{plan_reveal, RevealGoal, SearchLimits};
use crate::policy::MAX_FRAMES_PER_SELECTION;
use crate::reward::{GoldenAnnotation, RewardError, MAX_GOLD_FRAMES};
use crate::seeds;
use crate::timeline::{nearest_neighbor_interval, uniform_sample, FrameIndex, VideoTimeline, VisualContext};

/// Minimum distance between an evidence frame and any initial grid frame.
pub const GRID_CLEARANCE: usize = 2;
/// Redraws attempted before a placement is declared infeasible.
const PLACEMENT_ATTEMPTS: usize = 256;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("cannot place {k} evidence frames in a {frame_count}-frame video (seed {seed})")]
    InfeasiblePlacement { seed: u64, k: usize, frame_count: usize },
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("malformed task: {0}")]
    MalformedTask(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Knobs for task generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    /// Frames in the original video (M).
    pub frame_count: usize,
    /// Evidence frames per task are drawn uniformly from this inclusive range.
    pub min_evidence: usize,
    pub max_evidence: usize,
    pub option_count: usize,
    /// Amplitude of the uniform noise added to each signal.
    pub signal_noise: f64,
    /// Width of the signal bump; `frame_count / 64` when unset.
    pub sigma: Option<f64>,
    pub reveal_radius: usize,
    pub required_coverage: f64,
    /// Match window written into the golden annotation.
    pub tolerance: usize,
    /// Size of the initial sampling grid that evidence must avoid.
    pub grid_budget: usize,
    /// Frames re-sampled per selection, used by the reachability check.
    pub n_max: usize,
    /// Selection rounds the reachability check may use.
    pub selection_rounds: usize,
    /// Redraw placements until a plan within `selection_rounds` reveals all evidence.
    pub ensure_reachable: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            frame_count: 512,
            min_evidence: 1,
            max_evidence: 3,
            option_count: 4,
            signal_noise: 0.1,
            sigma: None,
            reveal_radius: 0,
            required_coverage: 1.0,
            tolerance: 0,
            grid_budget: 32,
            n_max: 16,
            selection_rounds: 2,
            ensure_reachable: true,
        }
    }
}

impl GenerationParams {
    /// Same parameters with exactly `k` evidence frames per task.
    pub fn with_evidence(mut self, k: usize) -> Self {
        self.min_evidence = k;
        self.max_evidence = k;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.frame_count < 64 {
            return bad(format!("frame_count must be at least 64, got {}", self.frame_count));
        }
        if self.min_evidence < 1 || self.max_evidence > MAX_GOLD_FRAMES || self.min_evidence > self.max_evidence {
            return bad(format!(
                "evidence count range {}..={} must lie within 1..={MAX_GOLD_FRAMES}",
                self.min_evidence, self.max_evidence
            ));
        }
        if self.option_count < 2 {
            return bad(format!("option_count must be at least 2, got {}", self.option_count));
        }
        if !(self.signal_noise.is_finite() && self.signal_noise >= 0.0) {
            return bad(format!("signal_noise must be non-negative, got {}", self.signal_noise));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("sigma must be positive, got {s}"));
            }
        }
        if !(self.required_coverage > 0.0 && self.required_coverage <= 1.0) {
            return bad(format!("required_coverage must lie in (0, 1], got {}", self.required_coverage));
        }
        if self.grid_budget == 0 || self.n_max == 0 {
            return bad("grid_budget and n_max must be positive".into());
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.frame_count as f64 / 64.0)
    }
}

/// One synthetic task. `evidence` is hidden from every non-oracle policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub task_id: String,
    pub seed: u64,
    pub params: GenerationParams,
    pub timeline: VideoTimeline,
    pub evidence: BTreeSet<FrameIndex>,
    pub annotation: GoldenAnnotation,
    pub option_count: usize,
    pub correct_option: usize,
    pub reveal_radius: usize,
    pub required_coverage: f64,
}

impl SyntheticTask {
    pub fn frame_count(&self) -> usize {
        self.timeline.frame_count()
    }

    pub fn reveal_goal(&self) -> RevealGoal<'_> {
        RevealGoal {
            evidence: &self.evidence,
            reveal_radius: self.reveal_radius,
            required_coverage: self.required_coverage,
        }
    }

    /// The deterministic wrong answer.
    pub fn wrong_option(&self) -> usize {
        (self.correct_option + 1) % self.option_count
    }
}

/// Frames allowed to hold evidence: inside a grid gap that re-sampling can
/// reach, at least [`GRID_CLEARANCE`] frames from both gap ends.
pub fn placement_candidates(frame_count: usize, grid_budget: usize) -> Vec<FrameIndex> {
    let grid = uniform_sample(frame_count, grid_budget);
    let mut out = Vec::new();
    for w in grid.frames().windows(2) {
        let (a, b) = (w[0], w[1]);
        let reachable = [a, b].iter().any(|&k| {
            nearest_neighbor_interval(&grid, k).is_ok_and(|iv| iv.lo() == a && iv.hi() == b)
        });
        if reachable && b >= a + 2 * GRID_CLEARANCE {
            out.extend(a + GRID_CLEARANCE..=b - GRID_CLEARANCE);
        }
    }
    out
}

fn build_signals(frame_count: usize, evidence: &BTreeSet<FrameIndex>, sigma: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ev: Vec<FrameIndex> = evidence.iter().copied().collect();
    let two_sigma_sq = 2.0 * sigma * sigma;
    (0..frame_count)
        .map(|i| {
            let pos = ev.partition_point(|&e| e < i);
            let d = [pos.checked_sub(1).map(|p| ev[p]), ev.get(pos).copied()]
                .into_iter()
                .flatten()
                .map(|e| e.abs_diff(i))
                .min()
                .expect("evidence is non-empty");
            let bump = (-((d * d) as f64) / two_sigma_sq).exp();
            let jitter = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
            (bump + jitter).clamp(0.0, 1.0)
        })
        .collect()
}

/// Generates the task for `seed`. Deterministic in `(seed, params)`.
pub fn generate_task(seed: u64, params: &GenerationParams) -> Result<SyntheticTask, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(params.min_evidence..=params.max_evidence);
    let infeasible = || SynthError::InfeasiblePlacement { seed, k, frame_count: params.frame_count };

    let candidates = placement_candidates(params.frame_count, params.grid_budget);
    if candidates.len() < k {
        return Err(infeasible());
    }
    let grid = uniform_sample(params.frame_count, params.grid_budget);
    let limits = SearchLimits { n_max: params.n_max, max_keys: MAX_FRAMES_PER_SELECTION };
    let mut evidence = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let draw: BTreeSet<FrameIndex> =
            sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
        let goal = RevealGoal { evidence: &draw, reveal_radius: params.reveal_radius, required_coverage: params.required_coverage };
        if !params.ensure_reachable || plan_reveal(&grid, &goal, params.selection_rounds, limits).is_some() {
            evidence = Some(draw);
            break;
        }
    }
    let evidence = evidence.ok_or_else(infeasible)?;

    let correct_option = rng.gen_range(0..params.option_count);
    let signals = build_signals(params.frame_count, &evidence, params.sigma(), params.signal_noise, &mut rng);
    let timeline = VideoTimeline::new(signals).expect("signals are clamped to [0, 1]");
    let annotation = GoldenAnnotation::new(evidence.clone(), params.tolerance)
        .expect("evidence count is within annotation limits");

    Ok(SyntheticTask {
        task_id: format!("task-{seed:016x}"),
        seed,
        params: params.clone(),
        timeline,
        evidence,
        annotation,
        option_count: params.option_count,
        correct_option,
        reveal_radius: params.reveal_radius,
        required_coverage: params.required_coverage,
    })
}

/// `count` tasks seeded from the named sub-stream of `root_seed`.
pub fn generate_suite(
    root_seed: u64,
    stream: &str,
    count: usize,
    params: &GenerationParams,
) -> Result<Vec<SyntheticTask>, SynthError> {
    params.validate()?;
    (0..count as u64)
        .map(|i| generate_task(seeds::derive(root_seed, stream, &[i]), params))
        .collect()
}

/// The stand-in reasoner's answer given the frames it finally sees.
pub fn answer_oracle(task: &SyntheticTask, final_context: &VisualContext) -> usize {
    if crate::planner::is_satisfied(final_context, &task.reveal_goal()) {
        task.correct_option
    } else {
        task.wrong_option()
    }
}

/// One line of a task file. Signals are regenerated from `seed` and `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: String,
    pub seed: u64,
    pub frame_count: usize,
    pub evidence: Vec<FrameIndex>,
    pub correct_option: usize,
    pub params: GenerationParams,
}

impl From<&SyntheticTask> for TaskRecord {
    fn from(t: &SyntheticTask) -> Self {
        Self {
            task_id: t.task_id.clone(),
            seed: t.seed,
            frame_count: t.frame_count(),
            evidence: t.evidence.iter().copied().collect(),
            correct_option: t.correct_option,
            params: t.params.clone(),
        }
    }
}

pub fn save_tasks(path: &Path, tasks: &[SyntheticTask]) -> Result<(), SynthError> {
    let records: Vec<TaskRecord> = tasks.iter().map(TaskRecord::from).collect();
    Ok(write_jsonl(path, &records)?)
}

/// Loads a task file, regenerating each task and checking it against the record.
pub fn load_tasks(path: &Path) -> Result<Vec<SyntheticTask>, SynthError> {
    let mut tasks = Vec::new();
    for (line, rec) in read_jsonl::<TaskRecord>(path)? {
        let mismatch = |m: String| SynthError::MalformedTask(format!("{}:{line}: {m}", path.display()));
        let mut task = generate_task(rec.seed, &rec.params).map_err(|e| mismatch(e.to_string()))?;
        let evidence: Vec<FrameIndex> = task.evidence.iter().copied().collect();
        if rec.frame_count != task.frame_count() || rec.evidence != evidence || rec.correct_option != task.correct_option {
            return Err(mismatch(format!("record `{}` does not match its regenerated task", rec.task_id)));
        }
        task.task_id = rec.task_id;
        tasks.push(task);
    }
    Ok(tasks)
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub gold_frames: Vec<FrameIndex>,
    pub tolerance: usize,
}

pub fn save_annotations(path: &Path, annotations: &BTreeMap<String, GoldenAnnotation>) -> Result<(), SynthError> {
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .map(|(id, a)| AnnotationRecord {
            task_id: id.clone(),
            gold_frames: a.gold_frames().iter().copied().collect(),
            tolerance: a.tolerance(),
        })
        .collect();
    Ok(write_jsonl(path, &records)?)
}

/// Loads annotations, rejecting empty, oversized, unsorted or duplicated sets.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, GoldenAnnotation>, SynthError> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_jsonl::<AnnotationRecord>(path)? {
        let bad = |m: String| SynthError::MalformedAnnotation(format!("{}:{line}: {m}", path.display()));
        if !rec.gold_frames.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("gold_frames must be strictly increasing".into()));
        }
        let ann = GoldenAnnotation::new(rec.gold_frames.iter().copied().collect(), rec.tolerance)
            .map_err(|e: RewardError| bad(e.to_string()))?;
        if out.insert(rec.task_id.clone(), ann).is_some() {
            return Err(bad(format!("duplicate task_id `{}`", rec.task_id)));
        }
    }
    Ok(out)
}

/// Annotations keyed by task id.
pub fn annotations_of(tasks: &[SyntheticTask]) -> BTreeMap<String, GoldenAnnotation> {
    tasks.iter().map(|t| (t.task_id.clone(), t.annotation.clone())).collect()
}
