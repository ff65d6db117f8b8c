use serde::{Deserialize, Serialize};

use super::env::{reset, step, WorldState};
use super::policy::Policy;
use super::render::{render, Frame};
use super::task::TaskSpec;
use crate::Result;

/// One rendered trajectory. Failure episodes carry no caption; they enter
/// training only as contrastive negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub frames: Vec<Frame>,
    pub states: Vec<WorldState>,
    pub actions: Vec<[f64; 2]>,
    pub caption: Option<String>,
    pub success: bool,
    pub task_id: String,
    pub seed: u64,
}

/// Sidecar metadata persisted next to each episode's frame tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub caption: Option<String>,
    pub num_frames: usize,
    pub states: Vec<WorldState>,
    pub actions: Vec<[f64; 2]>,
    pub frame_dtype: String,
}

/// Roll `policy` from a seeded reset to done/horizon, rendering every state.
/// The caption attaches only when the episode succeeded and the policy is the
/// expert; failures are stored uncaptioned.
pub fn generate_episode(
    task: &TaskSpec,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut state = reset(task, seed);
    let mut frames = vec![render(&state, task)];
    let mut states = vec![state];
    let mut actions = Vec::new();
    let mut success = false;
    loop {
        let action = policy.act(&state, task);
        let (next, reward, done) = step(&state, action, task)?;
        actions.push(action);
        frames.push(render(&next, task));
        states.push(next);
        state = next;
        if reward > 0.0 {
            success = true;
        }
        if done {
            break;
        }
    }
    let caption = if success && policy.is_expert() {
        Some(task.caption.clone())
    } else {
        None
    };
    Ok(EpisodeRecord {
        frames,
        states,
        actions,
        caption,
        success,
        task_id: task.task_id.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::policy::{corrupt_policy, ExpertPolicy};
    use crate::taskworld::task::enumerate_tasks;

    #[test]
    fn expert_episode_succeeds_with_caption() {
        let task = &enumerate_tasks()[0];
        let ep = generate_episode(task, &mut ExpertPolicy, 3).unwrap();
        assert!(ep.success);
        assert_eq!(ep.caption.as_deref(), Some(task.caption.as_str()));
        assert_eq!(ep.frames.len(), ep.actions.len() + 1);
        assert_eq!(ep.frames.len(), ep.states.len());
    }

    #[test]
    fn fully_random_policy_mostly_fails_uncaptioned() {
        let task = &enumerate_tasks()[0];
        let mut failures = 0;
        let n = 30;
        for seed in 0..n {
            let mut pol = corrupt_policy(ExpertPolicy, 1.0, seed + 1000).unwrap();
            let ep = generate_episode(task, &mut pol, seed).unwrap();
            assert!(ep.caption.is_none(), "non-expert episodes are uncaptioned");
            if !ep.success {
                failures += 1;
            }
        }
        assert!(failures as f64 >= 0.9 * n as f64, "{failures}/{n} failures");
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let task = &enumerate_tasks()[7];
        let a = generate_episode(task, &mut corrupt_policy(ExpertPolicy, 0.7, 42).unwrap(), 5).unwrap();
        let b = generate_episode(task, &mut corrupt_policy(ExpertPolicy, 0.7, 42).unwrap(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expert_calibration_sampled_tasks() {
        // Cheap per-commit slice of the full 200-reset calibration gate.
        for task in enumerate_tasks().iter().step_by(13) {
            let mut ok = 0;
            for seed in 0..40 {
                if generate_episode(task, &mut ExpertPolicy, seed).unwrap().success {
                    ok += 1;
                }
            }
            assert!(ok >= 38, "task {} succeeded {ok}/40", task.task_id);
        }
    }
}
