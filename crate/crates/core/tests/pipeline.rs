use std::fs;

use earl_lab_core::config::RunConfig;
use earl_lab_core::env::EnvConfig;
use earl_lab_core::format::{read_jsonl, FORMAT_HEADER};
use earl_lab_core::policy::{Agent, PolicyParams, PARAM_COUNT};
use earl_lab_core::reward::ScheduleConfig;
use earl_lab_core::run::{build_suites, run_arm, run_experiment, Ablation, Arm, LoggedTrajectory};
use earl_lab_core::seeds;
use earl_lab_core::synth::{
    annotations_of, generate_suite, load_annotations, load_tasks, save_annotations, save_tasks, GenerationParams,
    SynthError,
};
use earl_lab_core::trainer::{
    clone_pretrain, collect_group, demonstrations, policy_gradient, pretrain_on_oracle, trajectory_logprob,
    update_policy, RewardModel, TrainConfig, TrainError, TrainingSetup,
};

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.suite.train_tasks = 24;
    cfg.suite.eval_tasks = 8;
    cfg.schedule.total_iters = 12;
    cfg.train.prompts_per_batch = 6;
    cfg.train.group_size = 4;
    cfg.train.pretrain_trajectories = 24;
    cfg.train.eval_rollouts = 2;
    cfg.logging.trajectories_every = 4;
    cfg
}

#[test]
fn task_and_annotation_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = generate_suite(1, seeds::TASK_STREAM, 20, &GenerationParams::default()).unwrap();
    save_tasks(&dir.path().join("tasks.jsonl"), &tasks).unwrap();
    save_annotations(&dir.path().join("ann.jsonl"), &annotations_of(&tasks)).unwrap();

    let text = fs::read_to_string(dir.path().join("tasks.jsonl")).unwrap();
    assert_eq!(text.lines().next(), Some(FORMAT_HEADER));
    assert_eq!(load_tasks(&dir.path().join("tasks.jsonl")).unwrap(), tasks);
    assert_eq!(load_annotations(&dir.path().join("ann.jsonl")).unwrap(), annotations_of(&tasks));
}

#[test]
fn malformed_annotation_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let good = r#"{"task_id":"a","gold_frames":[3,9],"tolerance":0}"#;
    let cases = [
        (r#"{"task_id":"b","gold_frames":[],"tolerance":0}"#, "3"),
        (r#"{"task_id":"b","gold_frames":[1,2,3,4,5,6,7,8,9],"tolerance":0}"#, "3"),
        (r#"{"task_id":"b","gold_frames":[9,3],"tolerance":0}"#, "3"),
        (r#"{"task_id":"a","gold_frames":[4],"tolerance":0}"#, "3"),
        ("not json", "3"),
    ];
    for (bad, line) in cases {
        fs::write(&path, format!("{FORMAT_HEADER}\n{good}\n{bad}\n")).unwrap();
        let err = load_annotations(&path).unwrap_err().to_string();
        assert!(err.contains(&format!(":{line}")), "{bad}: {err}");
    }
    fs::write(&path, format!("{good}\n")).unwrap();
    assert!(matches!(load_annotations(&path), Err(SynthError::Format(_))));
}

#[test]
fn tampered_task_record_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tasks.jsonl");
    let tasks = generate_suite(2, seeds::TASK_STREAM, 3, &GenerationParams::default()).unwrap();
    save_tasks(&path, &tasks).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"correct_option\":", "\"correct_option\":1", 1).replace(":10,", ":1,");
    fs::write(&path, tampered).unwrap();
    assert!(load_tasks(&path).is_err());
}

#[test]
fn imitation_lowers_the_loss() {
    let tasks = generate_suite(3, seeds::TASK_STREAM, 30, &GenerationParams::default()).unwrap();
    let setup = TrainingSetup {
        train: TrainConfig { pretrain_trajectories: 30, ..TrainConfig::default() },
        schedule: ScheduleConfig::default(),
        env: EnvConfig::default(),
    };
    let (p, stats) = pretrain_on_oracle(&PolicyParams::default(), &tasks, &setup, 3).unwrap();
    assert!(stats.examples > 30);
    assert!(stats.nll_after < stats.nll_before);
    assert_ne!(p, PolicyParams::default());

    let env = EnvConfig::default();
    let reward = RewardModel::full(&ScheduleConfig::default());
    let rollouts: Vec<_> = tasks
        .iter()
        .flat_map(|t| collect_group(t, &Agent::Oracle, &env, &reward, 1, 1, 3, &[0]).unwrap().rollouts)
        .collect();
    let data = demonstrations(&rollouts);
    let (same, _) = clone_pretrain(&PolicyParams::default(), &data, 0, 0.5).unwrap();
    assert_eq!(same, PolicyParams::default());
    assert_eq!(clone_pretrain(&PolicyParams::default(), &[], 5, 0.5).unwrap_err(), TrainError::EmptyDataset);
}

#[test]
fn stored_gradients_match_recomputed_surrogate() {
    let params = PolicyParams { weights: [1.5, 0.5, -1.0, 0.8, 2.0, 1.0, -0.5, 0.3, 0.9, 0.2], temperature: 1.0 };
    let tasks = generate_suite(4, seeds::TASK_STREAM, 6, &GenerationParams::default()).unwrap();
    let env = EnvConfig::default();
    let reward = RewardModel::full(&ScheduleConfig::default());
    let agent = Agent::Softmax(params.clone());
    let groups: Vec<_> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| collect_group(t, &agent, &env, &reward, 200, 8, 4, &[i as u64]).unwrap())
        .collect();

    // Finite differences of sum_i A_i log pi(traj_i) against the stored gradients.
    let surrogate = |p: &PolicyParams| -> f64 {
        groups
            .iter()
            .flat_map(|g| g.rollouts.iter().zip(&g.advantages))
            .map(|(r, a)| a * trajectory_logprob(p, r).unwrap().0)
            .sum()
    };
    let analytic = policy_gradient(&groups);
    let h = 1e-5;
    for j in 0..PARAM_COUNT {
        let (mut up, mut down) = (params.clone(), params.clone());
        up.weights[j] += h;
        down.weights[j] -= h;
        let fd = (surrogate(&up) - surrogate(&down)) / (2.0 * h);
        assert!((fd - analytic[j]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {j}: {} vs {fd}", analytic[j]);
    }
    for g in &groups {
        for r in &g.rollouts {
            let (lp, _) = trajectory_logprob(&params, r).unwrap();
            assert_eq!(lp, r.logprob.unwrap());
        }
    }
    assert_ne!(update_policy(&params, &groups, 0.01).unwrap(), params);
    assert_eq!(update_policy(&params, &groups, 0.0).unwrap(), params);
}

#[test]
fn zero_variance_batch_is_skipped() {
    let tasks = generate_suite(5, seeds::TASK_STREAM, 4, &GenerationParams::default()).unwrap();
    let env = EnvConfig::default();
    let reward = RewardModel::full(&ScheduleConfig::default());
    // The oracle is deterministic, so every group has identical rewards.
    let groups: Vec<_> = tasks
        .iter()
        .map(|t| collect_group(t, &Agent::Oracle, &env, &reward, 1, 4, 5, &[0]).unwrap())
        .collect();
    assert!(groups.iter().all(|g| g.advantages.iter().all(|&a| a == 0.0)));
    assert_eq!(update_policy(&PolicyParams::default(), &groups, 0.1), Err(TrainError::DegenerateBatch));
    assert!(demonstrations(&groups[0].rollouts).len() >= 4);
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(7);
    let results = run_experiment(&cfg, Ablation::None, Some(dir.path())).unwrap();
    assert_eq!(results.len(), 1);
    for f in ["config.toml", "metrics.csv", "report.txt", "meta.json", "checkpoints/final.ckpt", "checkpoints/pretrained.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for f in ["iter_0004.jsonl", "iter_0008.jsonl", "iter_0012.jsonl", "eval.jsonl"] {
        assert!(dir.path().join("trajectories").join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 13);
    assert!(metrics.starts_with("iter,mean_reward,mean_iou,accuracy,selection_rate,alpha,beta\n"));

    let saved = RunConfig::from_toml_str(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved, cfg);
    let final_params = PolicyParams::load(&dir.path().join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(final_params, results[0].final_params);

    let logged = read_jsonl::<LoggedTrajectory>(&dir.path().join("trajectories/iter_0004.jsonl")).unwrap();
    assert_eq!(logged.len(), 6 * 4);
    assert!(logged.iter().all(|(_, t)| t.iter == 4 && t.phase == "train"));
}

#[test]
fn ablation_all_writes_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(8);
    cfg.logging.trajectories_every = 0;
    cfg.logging.eval_trajectories = false;
    let results = run_experiment(&cfg, Ablation::All, Some(dir.path())).unwrap();
    assert_eq!(results.len(), 5);
    for arm in Arm::ALL {
        assert!(dir.path().join(arm.name()).join("metrics.csv").is_file());
        let saved = fs::read_to_string(dir.path().join(arm.name()).join("config.toml")).unwrap();
        let saved = RunConfig::from_toml_str(&saved).unwrap();
        assert_eq!(saved.train.ablation, arm.flags(Default::default()));
    }
    let table = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let sft = results.iter().find(|r| r.arm == Arm::ImitationOnly).unwrap();
    assert_eq!(sft.final_params, PolicyParams::load(&dir.path().join("sft_only/checkpoints/pretrained.ckpt")).unwrap());
}

#[test]
fn training_is_seed_deterministic() {
    let cfg = tiny_config(9);
    let suites = build_suites(&cfg).unwrap();
    let a = run_arm(&cfg, Arm::Full, &suites, None).unwrap();
    let b = run_arm(&cfg, Arm::Full, &suites, None).unwrap();
    assert_eq!(a, b);
    let other = RunConfig { seed: 10, ..cfg.clone() };
    let c = run_arm(&other, Arm::Full, &build_suites(&other).unwrap(), None).unwrap();
    assert_ne!(a.rows, c.rows);
}
