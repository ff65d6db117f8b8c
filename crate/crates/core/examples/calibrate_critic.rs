//! Calibration harness: generates the default-scale dataset, trains critics at
//! a candidate acceptance config, and prints the quality metrics the
//! acceptance gates depend on.

use std::path::PathBuf;
use std::time::Instant;

use vlcrit_core::critic::CriticConfig;
use vlcrit_core::dataio::{generate_dataset, read_dataset, split_tasks};
use vlcrit_core::evalsuite::evaluate_split;
use vlcrit_core::objective::{ObjectiveConfig, ObjectiveKind};
use vlcrit_core::runconfig::{RunConfig, RunStamp};
use vlcrit_core::taskworld::enumerate_tasks;
use vlcrit_core::trainer::{select_checkpoint, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data_root = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/calib_data"));
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(33.0);
    let aggregator = args.get(4).cloned().unwrap_or_else(|| "tight".into());
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let embed_dim: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(48);

    let run_cfg = RunConfig::default();
    if !data_root.join("run.json").exists() {
        let t0 = Instant::now();
        let summary = generate_dataset(
            &run_cfg.data,
            run_cfg.seed,
            &data_root,
            &RunStamp::of(&run_cfg),
            true,
        )
        .unwrap();
        println!("generation: {:?} in {:.1}s", summary, t0.elapsed().as_secs_f64());
    }

    let (train_reader, _) = read_dataset(&data_root.join("train")).unwrap();
    let (val_reader, _) = read_dataset(&data_root.join("val")).unwrap();

    let critic_cfg = CriticConfig {
        embed_dim,
        text_layers: 1,
        frame_layers: 1,
        temporal_layers: 2,
        temporal_heads: 4,
        frame_patch: 16,
        aggregator: aggregator.clone(),
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        seed,
        learning_rate: lr,
        val_groups: 8,
        objective: ObjectiveConfig {
            alpha,
            objective: if alpha == 0.0 {
                ObjectiveKind::ContrastiveOnly
            } else {
                ObjectiveKind::Vlc
            },
        },
        ..Default::default()
    };
    let t0 = Instant::now();
    let (best, ckpts) = train(&critic_cfg, &train_cfg, &train_reader, &val_reader, None, "h", "c").unwrap();
    println!(
        "training {} epochs in {:.1}s ({:.1}s/epoch)",
        epochs,
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / epochs as f64
    );
    for c in &ckpts {
        println!(
            "  epoch {}: loss {:.4} v2t {:.4} rank {:.3} mono {:.3}",
            c.epoch, c.train_loss, c.metrics.v2t_xent, c.metrics.ranking_accuracy, c.metrics.monotonicity_rate
        );
    }
    let sel = select_checkpoint(&ckpts).unwrap();
    println!("selected epoch {}", sel.epoch);

    let tasks = enumerate_tasks();
    let (train_tasks, heldout_tasks) = split_tasks(&tasks, 5).unwrap();
    let sampling = train_cfg.eval_sampling;

    let t1 = Instant::now();
    let held_in_sample: Vec<_> = train_tasks.iter().step_by(4).cloned().collect();
    let hi = evaluate_split(&best, &held_in_sample, 10, 5, &[], &sampling, 1234, "train").unwrap();
    println!(
        "held-in ({} tasks x 10 groups): ranking {:.3} mono {:.3} [{:.1}s]",
        held_in_sample.len(),
        hi.ranking_accuracy,
        hi.monotonicity_rate,
        t1.elapsed().as_secs_f64()
    );

    let t2 = Instant::now();
    let ho = evaluate_split(&best, &heldout_tasks, 10, 5, &[(0.5, 0.2)], &sampling, 99, "test").unwrap();
    println!(
        "held-out (12 tasks x 10 groups): ranking {:.3} mono {:.3} [{:.1}s]",
        ho.ranking_accuracy,
        ho.monotonicity_rate,
        t2.elapsed().as_secs_f64()
    );
    for row in &ho.rows {
        println!("  robustness {} {} = {:.3}", row.metric, row.perturbation, row.value);
    }
    for (task, acc) in &ho.per_task_accuracy {
        println!("  held-out {task}: {acc:.2}");
    }
}
