//! SAC calibration: how fast does sparse-only SAC solve a push task at a given
//! budget, and how much does the dense critic reward accelerate it?

use std::time::Instant;

use vlcrit_core::critic::load_checkpoint;
use vlcrit_core::rl::{sac_train, steps_to_threshold, RLConfig, RewardSource};
use vlcrit_core::taskworld::task_by_id;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task_id = args.get(1).cloned().unwrap_or_else(|| "push-red-square-right".into());
    let source = args.get(2).cloned().unwrap_or_else(|| "sparse".into());
    let total_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ckpt = args.get(5).cloned();

    let task = task_by_id(&task_id).unwrap();
    let cfg = RLConfig {
        total_steps,
        eval_every: 2_000,
        eval_episodes: 50,
        hidden: vec![64, 64],
        batch_size: 128,
        learning_starts: 1_000,
        update_every: 2,
        seed,
        reward_source: if source == "vlc" {
            RewardSource::VlcPlusSparse
        } else {
            RewardSource::Sparse
        },
        ..Default::default()
    };
    let critic = ckpt.map(|c| load_checkpoint(std::path::Path::new(&c)).unwrap().0);
    let t0 = Instant::now();
    let (_, curve) = sac_train(&task, &cfg, critic.as_ref()).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let last = curve.points.last().map(|p| p.env_steps).unwrap_or(0);
    println!(
        "{task_id} {source} seed {seed}: {:.0}s for {last} steps ({:.2} ms/step)",
        wall,
        wall * 1000.0 / last.max(1) as f64
    );
    for p in &curve.points {
        println!("  {} {:.2}", p.env_steps, p.success_rate);
    }
    println!(
        "steps_to_90 = {:?} converged_at = {:?}",
        steps_to_threshold(&curve, 0.9).unwrap(),
        curve.converged_at
    );
}
