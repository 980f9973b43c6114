//! Training runs on disk: suites, ablation arms and the run directory layout.
//!
//! ```text
//! <out>/config.toml       effective configuration
//! <out>/metrics.csv       one row per iteration
//! <out>/checkpoints/      pretrained.ckpt, final.ckpt
//! <out>/trajectories/     iter_NNNN.jsonl, eval.jsonl
//! <out>/report.txt        final evaluation
//! <out>/meta.json         creation time and identifiers
//! ```
//!
//! `--ablate all` writes one such directory per arm plus `ablation.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::env::Trajectory;
use crate::format::{write_jsonl, FormatError};
use crate::reward::RewardBreakdown;
use crate::seeds;
use crate::synth::{generate_suite, SynthError, SyntheticTask};
use crate::trainer::{
    run_training, AblationFlags, EvalSummary, MetricsRow, PretrainStats, RolloutGroup, TrainError, TrainingSetup,
};
use crate::policy::PolicyParams;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |error| RunError::Io { path: path.to_path_buf(), error }
}

/// One training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Full,
    WithoutRelevance,
    WithoutIouGate,
    WithoutDynamicAdjustment,
    ImitationOnly,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Full,
        Arm::WithoutRelevance,
        Arm::WithoutIouGate,
        Arm::WithoutDynamicAdjustment,
        Arm::ImitationOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::WithoutRelevance => "wo_rr",
            Arm::WithoutIouGate => "wo_iou",
            Arm::WithoutDynamicAdjustment => "wo_da",
            Arm::ImitationOnly => "sft_only",
        }
    }

    /// `base` with this arm's ablation switched on.
    pub fn flags(self, base: AblationFlags) -> AblationFlags {
        let mut f = base;
        match self {
            Arm::Full => {}
            Arm::WithoutRelevance => f.disable_relevance = true,
            Arm::WithoutIouGate => f.disable_iou_gate = true,
            Arm::WithoutDynamicAdjustment => f.disable_dynamic_adjustment = true,
            Arm::ImitationOnly => f.skip_rl = true,
        }
        f
    }
}

/// Value of the `--ablate` switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    Rr,
    Iou,
    Da,
    Sft,
    All,
}

impl Ablation {
    pub fn arms(self) -> Vec<Arm> {
        match self {
            Ablation::None => vec![Arm::Full],
            Ablation::Rr => vec![Arm::WithoutRelevance],
            Ablation::Iou => vec![Arm::WithoutIouGate],
            Ablation::Da => vec![Arm::WithoutDynamicAdjustment],
            Ablation::Sft => vec![Arm::ImitationOnly],
            Ablation::All => Arm::ALL.to_vec(),
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => Ablation::None,
            "rr" => Ablation::Rr,
            "iou" => Ablation::Iou,
            "da" => Ablation::Da,
            "sft" => Ablation::Sft,
            "all" => Ablation::All,
            other => return Err(format!("unknown ablation `{other}` (expected none, rr, iou, da, sft or all)")),
        })
    }
}

/// Training and evaluation tasks of a run.
#[derive(Debug, Clone)]
pub struct Suites {
    pub train: Vec<SyntheticTask>,
    pub eval: Vec<SyntheticTask>,
}

pub fn build_suites(cfg: &RunConfig) -> Result<Suites, SynthError> {
    Ok(Suites {
        train: generate_suite(cfg.seed, seeds::TASK_STREAM, cfg.suite.train_tasks, &cfg.generation)?,
        eval: generate_suite(cfg.seed, seeds::EVAL_STREAM, cfg.suite.eval_tasks, &cfg.generation)?,
    })
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTrajectory {
    pub phase: String,
    pub iter: usize,
    pub group: usize,
    pub member: usize,
    pub advantage: f64,
    pub correct: bool,
    pub reward: RewardBreakdown,
    pub trajectory: Trajectory,
}

pub fn log_groups(phase: &str, iter: usize, groups: &[RolloutGroup]) -> Vec<LoggedTrajectory> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| {
            g.rollouts.iter().enumerate().map(move |(m, r)| LoggedTrajectory {
                phase: phase.to_string(),
                iter,
                group: gi,
                member: m,
                advantage: g.advantages[m],
                correct: g.correct[m],
                reward: g.rewards[m],
                trajectory: r.trajectory.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub pretrain: Option<PretrainStats>,
    pub skipped_updates: usize,
    pub final_params: PolicyParams,
    pub eval: EvalSummary,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Trains one arm. With `out`, writes the run directory there.
pub fn run_arm(cfg: &RunConfig, arm: Arm, suites: &Suites, out: Option<&Path>) -> Result<ArmResult, RunError> {
    let mut cfg = cfg.clone();
    cfg.train.ablation = arm.flags(cfg.train.ablation);
    let setup = TrainingSetup { train: cfg.train.clone(), schedule: cfg.schedule.clone(), env: cfg.env.clone() };

    let traj_dir = out.map(|o| o.join("trajectories"));
    if let Some(o) = out {
        for dir in [o.to_path_buf(), o.join("checkpoints"), o.join("trajectories")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let path = o.join("config.toml");
        fs::write(&path, cfg.to_toml_string()).map_err(io_err(&path))?;
    }

    let every = cfg.logging.trajectories_every;
    let mut log_error = None;
    let report = run_training(&setup, &suites.train, &suites.eval, cfg.seed, |log| {
        let (Some(dir), true) = (&traj_dir, every > 0 && log.row.iter % every == 0) else { return };
        if log_error.is_none() {
            let path = dir.join(format!("iter_{:04}.jsonl", log.row.iter));
            if let Err(e) = write_jsonl(&path, &log_groups("train", log.row.iter, log.groups)) {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }

    let result = ArmResult {
        arm,
        seed: cfg.seed,
        rows: report.rows.clone(),
        pretrain: report.pretrain,
        skipped_updates: report.skipped_updates,
        final_params: report.final_params.clone(),
        eval: report.eval,
    };

    if let Some(o) = out {
        let path = o.join("metrics.csv");
        fs::write(&path, metrics_csv(&report.rows)?).map_err(io_err(&path))?;
        let path = o.join("checkpoints/pretrained.ckpt");
        report.pretrained_params.save(&path).map_err(io_err(&path))?;
        let path = o.join("checkpoints/final.ckpt");
        report.final_params.save(&path).map_err(io_err(&path))?;
        if cfg.logging.eval_trajectories {
            let iter = cfg.schedule.total_iters;
            write_jsonl(&o.join("trajectories/eval.jsonl"), &log_groups("eval", iter, &report.eval_groups))?;
        }
        let path = o.join("report.txt");
        fs::write(&path, render_report(&result)).map_err(io_err(&path))?;
        let path = o.join("meta.json");
        fs::write(&path, meta_json(&result)).map_err(io_err(&path))?;
    }
    Ok(result)
}

fn render_report(r: &ArmResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "arm: {}", r.arm.name());
    let _ = writeln!(s, "seed: {}", r.seed);
    if let Some(p) = r.pretrain {
        let _ = writeln!(s, "imitation: {} examples, nll {:.4} -> {:.4}", p.examples, p.nll_before, p.nll_after);
    }
    let _ = writeln!(s, "iterations: {} ({} updates skipped)", r.rows.len(), r.skipped_updates);
    let e = r.eval;
    let _ = writeln!(s, "eval episodes: {}", e.episodes);
    let _ = writeln!(s, "eval accuracy: {:.4}", e.accuracy);
    let _ = writeln!(s, "eval mean iou: {:.4}", e.mean_iou);
    let _ = writeln!(s, "eval mean reward: {:.4}", e.mean_reward);
    let _ = writeln!(s, "eval selection rate: {:.4}", e.selection_rate);
    let _ = writeln!(s, "final weights: {:?}", r.final_params.weights);
    s
}

fn meta_json(r: &ArmResult) -> String {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({
        "created_unix_secs": created,
        "arm": r.arm.name(),
        "seed": r.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"
}

/// One row of `ablation.csv`.
#[derive(Debug, Clone, Serialize)]
struct AblationRow<'a> {
    arm: &'a str,
    seed: u64,
    accuracy: f64,
    mean_iou: f64,
    mean_reward: f64,
    selection_rate: f64,
}

/// Runs every arm of `ablation`. A single arm writes straight into `out`;
/// several arms get one sub-directory each plus `ablation.csv`.
pub fn run_experiment(cfg: &RunConfig, ablation: Ablation, out: Option<&Path>) -> Result<Vec<ArmResult>, RunError> {
    let suites = build_suites(cfg)?;
    let arms = ablation.arms();
    let nested = arms.len() > 1;
    let mut results = Vec::new();
    for arm in arms {
        let dir = out.map(|o| if nested { o.join(arm.name()) } else { o.to_path_buf() });
        results.push(run_arm(cfg, arm, &suites, dir.as_deref())?);
    }
    if let (Some(o), true) = (out, nested) {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &results {
            w.serialize(AblationRow {
                arm: r.arm.name(),
                seed: r.seed,
                accuracy: r.eval.accuracy,
                mean_iou: r.eval.mean_iou,
                mean_reward: r.eval.mean_reward,
                selection_rate: r.eval.selection_rate,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Csv(e.into_error().into()))?;
        let path = o.join("ablation.csv");
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(results)
}
