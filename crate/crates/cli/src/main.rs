use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use earl_lab_core::config::RunConfig;
use earl_lab_core::env::EnvConfig;
use earl_lab_core::format::write_jsonl;
use earl_lab_core::policy::{Agent, PolicyParams, RandomPolicy};
use earl_lab_core::reward::{schedule_weights, score_trajectory, GoldenAnnotation, RewardOptions, ScheduleConfig};
use earl_lab_core::rollout::run_episode;
use earl_lab_core::run::{run_experiment, Ablation, LoggedTrajectory};
use earl_lab_core::seeds;
use earl_lab_core::synth::{
    annotations_of, generate_suite, load_annotations, load_tasks, save_annotations, save_tasks, GenerationParams,
    SyntheticTask,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "earl-lab", version, about = "Evidence-aware frame selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic tasks and their golden annotations.
    Generate {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Frames per video.
        #[arg(long, default_value_t = 512)]
        m: usize,
        /// Evidence frames per task (default: 1 to 3).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a policy on a task file and audit the rewards.
    Rollout {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// random, oracle, or checkpoint:<path>
        #[arg(long, default_value = "oracle")]
        policy: String,
        /// Episodes per task.
        #[arg(long, default_value_t = 1)]
        group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training iteration whose reward weights are used (default: the last).
        #[arg(long)]
        iter: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy, optionally with a reward ablation.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// none, rr, iou, da, sft or all
        #[arg(long, default_value = "none")]
        ablate: Ablation,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn data(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_DATA, error: e.into() })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_RUNTIME, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate { count, m, k, seed, out } => generate(count, m, k, seed, &out),
        Command::Rollout { tasks, annotations, policy, group, seed, iter, out } => {
            rollout(&tasks, &annotations, &policy, group, seed, iter, &out)
        }
        Command::Train { config, ablate, seed, out } => train(config.as_deref(), ablate, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn create_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).runtime()
}

fn generate(count: usize, m: usize, k: Option<usize>, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut params = GenerationParams { frame_count: m, ..GenerationParams::default() };
    if let Some(k) = k {
        params = params.with_evidence(k);
    }
    params.validate().data()?;
    if count == 0 {
        return Err(anyhow!("--count must be positive")).data();
    }
    let tasks = generate_suite(seed, seeds::TASK_STREAM, count, &params).data()?;
    create_dir(out)?;
    save_tasks(&out.join("tasks.jsonl"), &tasks).runtime()?;
    save_annotations(&out.join("annotations.jsonl"), &annotations_of(&tasks)).runtime()?;
    println!("wrote {} tasks to {}", tasks.len(), out.display());
    Ok(())
}

fn parse_agent(spec: &str) -> Result<Agent, Failure> {
    match spec {
        "random" => Ok(Agent::Random(RandomPolicy::default())),
        "oracle" => Ok(Agent::Oracle),
        _ => match spec.strip_prefix("checkpoint:") {
            Some(path) => PolicyParams::load(Path::new(path)).map(Agent::Softmax).data(),
            None => Err(anyhow!("unknown policy `{spec}` (expected random, oracle or checkpoint:<path>)"))
                .map_err(|error| Failure { code: EXIT_USAGE, error }),
        },
    }
}

#[derive(Serialize)]
struct AuditRow<'a> {
    task_id: &'a str,
    member: usize,
    correct: bool,
    selections: usize,
    iou: f64,
    r_action: f64,
    r_relevance: f64,
    r_correct: f64,
    alpha: f64,
    beta: f64,
    r_total: f64,
    recomposition_error: f64,
}

fn matching_annotation<'a>(
    task: &SyntheticTask,
    annotations: &'a BTreeMap<String, GoldenAnnotation>,
) -> Result<&'a GoldenAnnotation> {
    let ann = annotations
        .get(&task.task_id)
        .ok_or_else(|| anyhow!("no annotation for task `{}`", task.task_id))?;
    ann.check_bounds(task.frame_count()).with_context(|| format!("annotation of `{}`", task.task_id))?;
    Ok(ann)
}

fn rollout(
    tasks_path: &Path,
    annotations_path: &Path,
    policy: &str,
    group: usize,
    seed: u64,
    iter: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if group == 0 {
        return Err(anyhow!("--group must be positive")).map_err(|error| Failure { code: EXIT_USAGE, error });
    }
    let agent = parse_agent(policy)?;
    let tasks = load_tasks(tasks_path).data()?;
    let annotations = load_annotations(annotations_path).data()?;
    let schedule = ScheduleConfig::default();
    let iter = iter.unwrap_or(schedule.total_iters);
    let weights = schedule_weights(&schedule, iter);
    let env = EnvConfig::default();

    let mut logged = Vec::new();
    let mut audit = csv::Writer::from_writer(Vec::new());
    let mut correct = 0usize;
    for (ti, task) in tasks.iter().enumerate() {
        let ann = matching_annotation(task, &annotations).data()?;
        for member in 0..group {
            let mut rng = seeds::stream_rng(seed, seeds::ROLLOUT_STREAM, &[ti as u64, member as u64]);
            let r = run_episode(task, &agent, &env, &mut rng).runtime()?;
            let b = score_trajectory(&r.trajectory, ann, task.correct_option, weights, RewardOptions::default())
                .runtime()?;
            let ok = r.correct(task);
            correct += usize::from(ok);
            audit
                .serialize(AuditRow {
                    task_id: &task.task_id,
                    member,
                    correct: ok,
                    selections: r.trajectory.selection_count(),
                    iou: b.iou,
                    r_action: b.r_action,
                    r_relevance: b.r_relevance,
                    r_correct: b.r_correct,
                    alpha: b.alpha,
                    beta: b.beta,
                    r_total: b.r_total,
                    recomposition_error: b.recomposition_error(),
                })
                .runtime()?;
            logged.push(LoggedTrajectory {
                phase: "rollout".into(),
                iter,
                group: ti,
                member,
                advantage: 0.0,
                correct: ok,
                reward: b,
                trajectory: r.trajectory,
            });
        }
    }
    create_dir(out)?;
    write_jsonl(&out.join("trajectories.jsonl"), &logged).runtime()?;
    let bytes = audit.into_inner().map_err(|e| anyhow!("audit csv: {}", e.error())).runtime()?;
    let path = out.join("audit.csv");
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display())).runtime()?;
    let episodes = logged.len();
    println!(
        "{episodes} episodes, accuracy {:.4}, wrote {}",
        correct as f64 / episodes.max(1) as f64,
        out.display()
    );
    Ok(())
}

fn train(config: Option<&Path>, ablate: Ablation, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path).data()?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().data()?;
    let results = run_experiment(&cfg, ablate, Some(out)).runtime()?;
    for r in &results {
        println!(
            "{:<9} accuracy {:.4}  mean_iou {:.4}  mean_reward {:.4}",
            r.arm.name(),
            r.eval.accuracy,
            r.eval.mean_iou,
            r.eval.mean_reward
        );
    }
    Ok(())
}
