//! End-to-end exercise of every subcommand on a miniature configuration.

use std::path::Path;
use std::process::{Command, Output};

fn vlcrit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlcrit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_CONFIG: &str = r#"
seed = 11

[data]
successes_per_task = 10
failures_per_task = 3
expert_gate_resets = 20

[critic]
embed_dim = 16
text_layers = 1
frame_layers = 1
temporal_layers = 1
temporal_heads = 2
frame_patch = 16

[objective]
alpha = 33.0

[trainer]
batch_successes = 8
batch_failures = 4
epochs = 1
val_groups = 2

[rl]
total_steps = 420
eval_every = 200
eval_episodes = 2
hidden = [16, 16]
batch_size = 32
learning_starts = 100

[eval]
groups_per_task = 2
k_failures = 3
"#;

#[test]
fn full_pipeline_on_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, TINY_CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();

    // generate-data
    let out = vlcrit(&["generate-data", "--config", cfg, "--out", data_s]);
    assert_ok(&out, "generate-data");
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["train_tasks"], 48);
    assert_eq!(summary["heldout_tasks"], 12);
    assert_eq!(summary["test"], 12 * 13);
    assert!(data.join("train/manifest.jsonl").exists());
    assert!(data.join("run.json").exists());

    // rerun without --force fails with a JSON error line
    let out = vlcrit(&["generate-data", "--config", cfg, "--out", data_s]);
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_slice(String::from_utf8_lossy(&out.stderr).trim().as_bytes()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("not empty"));

    // train-critic
    let ckpt_root = dir.path().join("critic");
    let out = vlcrit(&[
        "train-critic",
        "--config",
        cfg,
        "--data",
        data_s,
        "--out",
        ckpt_root.to_str().unwrap(),
    ]);
    assert_ok(&out, "train-critic");
    let selected: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ckpt_root.join("selected.json")).unwrap()).unwrap();
    let best_dir = selected["dir"].as_str().unwrap().to_string();
    assert!(Path::new(&best_dir).join("weights.bin").exists());
    assert!(ckpt_root.join("train_log.jsonl").exists());

    // dataset hash mismatch: different data section
    let cfg2_path = dir.path().join("cfg2.toml");
    std::fs::write(&cfg2_path, TINY_CONFIG.replace("failures_per_task = 3", "failures_per_task = 4")).unwrap();
    let out = vlcrit(&[
        "train-critic",
        "--config",
        cfg2_path.to_str().unwrap(),
        "--data",
        data_s,
        "--out",
        dir.path().join("critic2").to_str().unwrap(),
    ]);
    assert!(!out.status.success(), "hash mismatch must fail");

    // eval-critic on the held-out split with an extra perturbation row
    let report = dir.path().join("report.json");
    let out = vlcrit(&[
        "eval-critic",
        "--config",
        cfg,
        "--checkpoint",
        &best_dir,
        "--split",
        "heldout",
        "--perturb",
        "0.5,0.2",
        "--groups",
        "1",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval-critic");
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(rep["stamp"]["config_hash"].as_str().unwrap().len() == 64);
    let rows = rep["evaluation"]["rows"].as_array().unwrap();
    assert!(rows.iter().any(|r| r["perturbation"]
        .as_str()
        .unwrap()
        .contains("noise=0.2")));
    // held-out split restricted to held-out tasks
    for (task, _) in rep["evaluation"]["per_task_accuracy"].as_object().unwrap() {
        // every 5th task alphabetically is held out; spot-check membership
        assert!(task.starts_with("push-") || task.starts_with("reach-"));
    }
    assert_eq!(rep["evaluation"]["per_task_accuracy"].as_object().unwrap().len(), 12);

    // rank-trajectories
    let out = vlcrit(&[
        "rank-trajectories",
        "--config",
        cfg,
        "--checkpoint",
        &best_dir,
        "--task-id",
        "push-red-square-left",
        "--groups",
        "2",
    ]);
    assert_ok(&out, "rank-trajectories");
    let rank: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = rank["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let out = vlcrit(&[
        "rank-trajectories",
        "--config",
        cfg,
        "--checkpoint",
        &best_dir,
        "--task-id",
        "push-red-square-left",
        "--groups",
        "0",
    ]);
    assert!(!out.status.success());

    // plot-rewards
    let plots = dir.path().join("plots");
    let out = vlcrit(&[
        "plot-rewards",
        "--config",
        cfg,
        "--checkpoint",
        &best_dir,
        "--data",
        data_s,
        "--split",
        "test",
        "--limit",
        "2",
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_ok(&out, "plot-rewards");
    assert!(plots.join("ep_0000.csv").exists());
    assert!(plots.join("ep_0001.png").exists());
    let csv = std::fs::read_to_string(plots.join("ep_0000.csv")).unwrap();
    let first_row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first_row[2].parse::<f64>().unwrap(), 0.0);

    // train-policy: sparse needs no checkpoint
    let run_dir = dir.path().join("policy-sparse");
    let out = vlcrit(&[
        "train-policy",
        "--config",
        cfg,
        "--task-id",
        "push-red-square-left",
        "--reward",
        "sparse",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "train-policy sparse");
    assert!(run_dir.join("curve.jsonl").exists());
    assert!(run_dir.join("policy.bin").exists());

    // vlc reward requires a checkpoint
    let out = vlcrit(&[
        "train-policy",
        "--config",
        cfg,
        "--task-id",
        "push-red-square-left",
        "--reward",
        "vlc",
        "--out",
        dir.path().join("policy-vlc").to_str().unwrap(),
    ]);
    assert!(!out.status.success());

    // unknown task id
    let out = vlcrit(&[
        "train-policy",
        "--config",
        cfg,
        "--task-id",
        "push-chartreuse-dodecahedron-up",
        "--reward",
        "sparse",
        "--out",
        dir.path().join("policy-x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());

    // ablate: two-run grid
    let grid_path = dir.path().join("grid.toml");
    std::fs::write(
        &grid_path,
        r#"
[[runs]]
name = "alpha0"
[runs.overrides.objective]
objective = "contrastive_only"

[[runs]]
name = "meanpool"
[runs.overrides.critic]
aggregator = "mean_pool"
"#,
    )
    .unwrap();
    let ablate_out = dir.path().join("ablate");
    let out = vlcrit(&[
        "ablate",
        "--config",
        cfg,
        "--grid",
        grid_path.to_str().unwrap(),
        "--data",
        data_s,
        "--out",
        ablate_out.to_str().unwrap(),
    ]);
    assert_ok(&out, "ablate");
    let results: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ablate_out.join("ablate_results.json")).unwrap())
            .unwrap();
    assert_eq!(results.as_array().unwrap().len(), 2);
}

#[test]
fn policy_curves_reproduce_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, TINY_CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut curves = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = vlcrit(&[
            "train-policy",
            "--config",
            cfg,
            "--task-id",
            "reach-red-square",
            "--reward",
            "sparse",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_ok(&out, "train-policy");
        curves.push(std::fs::read_to_string(out_dir.join("curve.jsonl")).unwrap());
    }
    assert_eq!(curves[0], curves[1], "identical seeds reproduce curves");
}
