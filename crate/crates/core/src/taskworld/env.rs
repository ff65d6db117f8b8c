use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{TaskSpec, Verb};
use crate::seeds::{child_seed_str, rng_from};
use crate::{Error, Result};

/// World units the agent moves per unit action component.
pub const STEP_DELTA: f64 = 0.05;
/// Episode length cap.
pub const HORIZON: usize = 64;
/// Agent drags the object while within this distance.
pub const CONTACT_RADIUS: f64 = 0.10;
/// Minimum agent-object and object-goal separation at reset.
pub const MIN_SEPARATION: f64 = 0.2;
/// Spawn positions are sampled from this sub-square so bodies stay visible.
pub const SPAWN_LO: f64 = 0.10;
pub const SPAWN_HI: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_pos: [f64; 2],
    pub object_pos: [f64; 2],
    pub goal_pos: [f64; 2],
    pub step_index: usize,
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_arena(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// True once the task is solved in `state`.
pub fn success_predicate(state: &WorldState, task: &TaskSpec) -> bool {
    match task.verb {
        Verb::Push => dist(state.object_pos, state.goal_pos) < task.success_radius,
        Verb::Reach => dist(state.agent_pos, state.object_pos) < task.success_radius,
    }
}

/// Place agent and object uniformly at random (seeded), keeping the minimum
/// separations that guarantee the predicate is false at t=0.
pub fn reset(task: &TaskSpec, seed: u64) -> WorldState {
    let mut rng = rng_from(child_seed_str(seed, "reset", &task.task_id));
    let goal_pos = task.goal_side.goal_pos();
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
        [
            rng.random_range(SPAWN_LO..SPAWN_HI),
            rng.random_range(SPAWN_LO..SPAWN_HI),
        ]
    };
    loop {
        let object_pos = sample(&mut rng);
        let agent_pos = sample(&mut rng);
        if dist(agent_pos, object_pos) >= MIN_SEPARATION
            && dist(object_pos, goal_pos) >= MIN_SEPARATION
        {
            return WorldState {
                agent_pos,
                object_pos,
                goal_pos,
                step_index: 0,
            };
        }
    }
}

/// Kinematic step: the agent moves by `action * STEP_DELTA` (clipped to the
/// arena); an object in contact translates by the agent's realized
/// displacement. Returns `(next_state, sparse_reward, done)`.
pub fn step(state: &WorldState, action: [f64; 2], task: &TaskSpec) -> Result<(WorldState, f64, bool)> {
    if !action.iter().all(|a| a.is_finite() && (-1.0..=1.0).contains(a)) {
        return Err(Error::InvalidAction(action));
    }
    let new_agent = clamp_arena([
        state.agent_pos[0] + action[0] * STEP_DELTA,
        state.agent_pos[1] + action[1] * STEP_DELTA,
    ]);
    let displacement = [
        new_agent[0] - state.agent_pos[0],
        new_agent[1] - state.agent_pos[1],
    ];
    let mut new_object = state.object_pos;
    if dist(new_agent, state.object_pos) < CONTACT_RADIUS {
        new_object = clamp_arena([
            state.object_pos[0] + displacement[0],
            state.object_pos[1] + displacement[1],
        ]);
    }
    let next = WorldState {
        agent_pos: new_agent,
        object_pos: new_object,
        goal_pos: state.goal_pos,
        step_index: state.step_index + 1,
    };
    let solved = success_predicate(&next, task);
    let reward = if solved { 1.0 } else { 0.0 };
    let done = solved || next.step_index >= HORIZON;
    Ok((next, reward, done))
}

fn clamp_action(v: [f64; 2]) -> [f64; 2] {
    [v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0)]
}

/// Greedy controller moving the agent toward `target` at full speed, slowing
/// on approach.
pub fn reach_controller(agent: [f64; 2], target: [f64; 2]) -> [f64; 2] {
    clamp_action([
        (target[0] - agent[0]) / STEP_DELTA,
        (target[1] - agent[1]) / STEP_DELTA,
    ])
}

/// Two-phase push controller: move behind the object relative to `goal`
/// (orbiting rather than cutting through it, since contact drags the object
/// along the agent's motion), then push toward the goal while in contact.
pub fn push_controller(state: &WorldState, goal: [f64; 2]) -> [f64; 2] {
    let agent = state.agent_pos;
    let object = state.object_pos;
    let d_ao = dist(agent, object);
    let to_goal = [goal[0] - object[0], goal[1] - object[1]];
    let n = (to_goal[0].powi(2) + to_goal[1].powi(2)).sqrt().max(1e-9);
    // Unit vector from goal through the object: the side to push from.
    let dir_behind = [-to_goal[0] / n, -to_goal[1] / n];
    let radial = {
        let v = [agent[0] - object[0], agent[1] - object[1]];
        let m = (v[0].powi(2) + v[1].powi(2)).sqrt().max(1e-9);
        [v[0] / m, v[1] / m]
    };
    // Staging point just inside contact range; the arena clamp redirects it
    // along the wall when the raw behind direction points outside.
    let station = [
        (object[0] + dir_behind[0] * 0.07).clamp(0.01, 0.99),
        (object[1] + dir_behind[1] * 0.07).clamp(0.01, 0.99),
    ];
    let station_dir = {
        let v = [station[0] - object[0], station[1] - object[1]];
        let m = (v[0].powi(2) + v[1].powi(2)).sqrt().max(1e-9);
        [v[0] / m, v[1] / m]
    };
    let alignment = radial[0] * station_dir[0] + radial[1] * station_dir[1];

    // Dragging moves the object by the agent's displacement, so a goal-ward
    // step moves the object goal-ward no matter where the agent stands; take
    // it whenever the step would end inside drag range.
    let push_a = clamp_action([
        (goal[0] - object[0]) / STEP_DELTA,
        (goal[1] - object[1]) / STEP_DELTA,
    ]);
    let landing = clamp_arena([
        agent[0] + push_a[0] * STEP_DELTA,
        agent[1] + push_a[1] * STEP_DELTA,
    ]);
    if dist(landing, object) < CONTACT_RADIUS - 0.005 {
        push_a
    } else if alignment > 0.75 {
        // Well behind: walk into the station point.
        reach_controller(agent, station)
    } else {
        // Misaligned: orbit toward the push side, holding a radius just above
        // contact. If a wall blocks the orbit, go the other way.
        let cross = radial[0] * station_dir[1] - radial[1] * station_dir[0];
        let r_err = (CONTACT_RADIUS + 0.04) - d_ao;
        let orbit_action = |tangent: [f64; 2]| {
            clamp_action([
                (tangent[0] + radial[0] * r_err * 8.0) * 3.0,
                (tangent[1] + radial[1] * r_err * 8.0) * 3.0,
            ])
        };
        let ccw = [-radial[1], radial[0]];
        let cw = [radial[1], -radial[0]];
        let preferred = if cross >= 0.0 { ccw } else { cw };
        let a = orbit_action(preferred);
        let next = clamp_arena([
            agent[0] + a[0] * STEP_DELTA,
            agent[1] + a[1] * STEP_DELTA,
        ]);
        if dist(next, agent) < 0.3 * STEP_DELTA {
            orbit_action(if cross >= 0.0 { cw } else { ccw })
        } else {
            a
        }
    }
}

/// Scripted expert for the true task target.
pub fn expert_action(state: &WorldState, task: &TaskSpec) -> [f64; 2] {
    match task.verb {
        Verb::Push => push_controller(state, state.goal_pos),
        Verb::Reach => reach_controller(state.agent_pos, state.object_pos),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::task::enumerate_tasks;

    #[test]
    fn reset_is_deterministic_and_in_arena() {
        let task = &enumerate_tasks()[0];
        let a = reset(task, 7);
        let b = reset(task, 7);
        assert_eq!(a, b);
        let c = reset(task, 0);
        for p in [c.agent_pos, c.object_pos, c.goal_pos] {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
        assert_ne!(reset(task, 8), a);
    }

    #[test]
    fn reset_never_starts_solved() {
        for task in enumerate_tasks() {
            for seed in 0..20 {
                let s = reset(&task, seed);
                assert!(!success_predicate(&s, &task), "{} seed {seed}", task.task_id);
            }
        }
    }

    #[test]
    fn zero_action_only_advances_time() {
        let task = &enumerate_tasks()[0];
        let s = reset(task, 3);
        let (next, r, _) = step(&s, [0.0, 0.0], task).unwrap();
        assert_eq!(next.agent_pos, s.agent_pos);
        assert_eq!(next.object_pos, s.object_pos);
        assert_eq!(next.step_index, s.step_index + 1);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn object_at_goal_is_terminal() {
        let task = &enumerate_tasks()[0]; // a push task
        let mut s = reset(task, 3);
        s.object_pos = s.goal_pos;
        let (_, r, done) = step(&s, [0.0, 0.0], task).unwrap();
        assert_eq!(r, 1.0);
        assert!(done);
    }

    #[test]
    fn out_of_range_action_rejected() {
        let task = &enumerate_tasks()[0];
        let s = reset(task, 3);
        assert!(step(&s, [1.5, 0.0], task).is_err());
        assert!(step(&s, [0.0, f64::NAN], task).is_err());
    }

    #[test]
    fn expert_moves_toward_object_geometry() {
        let task = crate::taskworld::task::task_by_id("push-red-square-right").unwrap();
        let s = WorldState {
            agent_pos: [0.1, 0.5],
            object_pos: [0.5, 0.5],
            goal_pos: [0.92, 0.5],
            step_index: 0,
        };
        let a = expert_action(&s, &task);
        assert!(a[0] > 0.0, "agent far left of object/goal must move right");
    }

    #[test]
    fn reach_expert_near_zero_at_object() {
        let task = crate::taskworld::task::task_by_id("reach-red-square").unwrap();
        let s = WorldState {
            agent_pos: [0.5, 0.5],
            object_pos: [0.5, 0.5],
            goal_pos: task.goal_side.goal_pos(),
            step_index: 0,
        };
        let a = expert_action(&s, &task);
        assert!(a[0].abs() < 1e-9 && a[1].abs() < 1e-9);
    }

    #[test]
    fn horizon_terminates() {
        let task = &enumerate_tasks()[0];
        let mut s = reset(task, 11);
        let mut done = false;
        let mut steps = 0;
        while !done {
            let (next, _, d) = step(&s, [0.0, 0.0], task).unwrap();
            s = next;
            done = d;
            steps += 1;
            assert!(steps <= HORIZON);
        }
        assert_eq!(steps, HORIZON);
    }
}
