//! Procedural 2D manipulation world: 60 parameterized push/reach tasks, a
//! kinematic simulator, a scripted expert, corrupted-policy failure
//! generation, a deterministic rasterizer, and evaluation-time visual
//! perturbations.

pub mod env;
pub mod episode;
pub mod policy;
pub mod render;
pub mod task;

pub use env::{
    expert_action, reset, step, success_predicate, WorldState, CONTACT_RADIUS, HORIZON, STEP_DELTA,
};
pub use episode::{generate_episode, EpisodeMeta, EpisodeRecord};
pub use policy::{corrupt_policy, CorruptPolicy, ExpertPolicy, Policy, TargetedExpert};
pub use render::{object_mask, perturb_frame, render, Frame, FRAME_SIZE};
pub use task::{enumerate_tasks, task_by_id, Color, GoalSide, Shape, TaskSpec, Verb};

/// Expert calibration: success rate over `n_resets` seeded resets of one task.
pub fn expert_success_rate(task: &TaskSpec, n_resets: u64) -> f64 {
    let mut ok = 0u64;
    for seed in 0..n_resets {
        let mut state = env::reset(task, seed);
        loop {
            let action = env::expert_action(&state, task);
            let (next, reward, done) = env::step(&state, action, task).expect("expert action");
            state = next;
            if reward > 0.0 {
                ok += 1;
                break;
            }
            if done {
                break;
            }
        }
    }
    ok as f64 / n_resets as f64
}
