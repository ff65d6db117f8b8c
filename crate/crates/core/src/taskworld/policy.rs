use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::env::{expert_action, push_controller, reach_controller, WorldState};
use super::task::{TaskSpec, Verb};
use crate::seeds::rng_from;
use crate::{Error, Result};

/// A rollout policy for episode generation. Policies may hold per-episode
/// RNG state, so construct a fresh one per episode for determinism.
pub trait Policy {
    fn act(&mut self, state: &WorldState, task: &TaskSpec) -> [f64; 2];
    /// Only expert successes are captioned in generated datasets.
    fn is_expert(&self) -> bool {
        false
    }
}

/// The scripted demonstrator.
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn act(&mut self, state: &WorldState, task: &TaskSpec) -> [f64; 2] {
        expert_action(state, task)
    }
    fn is_expert(&self) -> bool {
        true
    }
}

/// Expert controller steered at an arbitrary (typically wrong) target.
pub struct TargetedExpert {
    pub target: [f64; 2],
}

impl Policy for TargetedExpert {
    fn act(&mut self, state: &WorldState, task: &TaskSpec) -> [f64; 2] {
        match task.verb {
            Verb::Push => push_controller(state, self.target),
            Verb::Reach => reach_controller(state.agent_pos, self.target),
        }
    }
}

/// Wraps a base policy, replacing each action with a uniform random one with
/// probability `p` (per-step seeded Bernoulli draws).
pub struct CorruptPolicy<P: Policy> {
    base: P,
    p: f64,
    rng: ChaCha8Rng,
}

/// Build a corrupted policy; errors unless `0 <= p <= 1`.
pub fn corrupt_policy<P: Policy>(base: P, p: f64, seed: u64) -> Result<CorruptPolicy<P>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "corruption probability {p} outside [0, 1]"
        )));
    }
    Ok(CorruptPolicy {
        base,
        p,
        rng: rng_from(seed),
    })
}

impl<P: Policy> Policy for CorruptPolicy<P> {
    fn act(&mut self, state: &WorldState, task: &TaskSpec) -> [f64; 2] {
        let base_action = self.base.act(state, task);
        // Draw the Bernoulli first so the stream advances identically whether
        // or not the replacement fires.
        let replace = self.rng.random_range(0.0..1.0) < self.p;
        if replace {
            [
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
            ]
        } else {
            base_action
        }
    }
}
