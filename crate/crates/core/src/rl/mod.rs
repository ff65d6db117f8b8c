//! Soft actor-critic policy training on the task world with a configurable
//! reward source (sparse-only or critic-shaped dense + sparse), plus periodic
//! deterministic policy evaluation.

pub mod replay;
pub mod sac;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::critic::CriticModel;
use crate::nn::graph::Graph;
use crate::nn::layers::NodeCache;
use crate::reward_adapter::{RewardAdapter, RewardPipelineConfig};
use crate::seeds::{child_seed, rng_from};
use crate::taskworld::{render, reset, step, TaskSpec, Verb, WorldState, HORIZON};
use crate::{Error, Result};

pub use replay::{ReplayBuffer, Transition};
pub use sac::{SacNets, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    Sparse,
    VlcPlusSparse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    pub gamma: f64,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub learning_starts: usize,
    pub lr: f64,
    pub tau: f64,
    /// Gradient updates happen every this many environment steps.
    pub update_every: usize,
    pub entropy_target: f64,
    pub seed: u64,
    pub reward_source: RewardSource,
    pub reward: RewardPipelineConfig,
    /// Stop once the 10-most-recent-evaluations mean reaches 0.98.
    pub stop_on_convergence: bool,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            gamma: 0.99,
            total_steps: 60_000,
            eval_every: 2_000,
            eval_episodes: 50,
            hidden: vec![256, 256, 256],
            replay_capacity: 100_000,
            batch_size: 256,
            learning_starts: 1_000,
            lr: 3e-4,
            tau: 0.005,
            update_every: 1,
            entropy_target: -(sac::ACTION_DIM as f64),
            seed: 0,
            reward_source: RewardSource::Sparse,
            reward: RewardPipelineConfig::default(),
            stop_on_convergence: true,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "discount {} must lie strictly inside (0, 1)",
                self.gamma
            )));
        }
        if self.eval_episodes < 1 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.batch_size == 0 || self.update_every == 0 {
            return Err(Error::Config("batch_size and update_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
    pub converged_at: Option<usize>,
}

impl TrainingCurve {
    fn push(&mut self, env_steps: usize, success_rate: f64) {
        debug_assert!(self
            .points
            .last()
            .map(|p| p.env_steps < env_steps)
            .unwrap_or(true));
        self.points.push(CurvePoint {
            env_steps,
            success_rate,
        });
        if self.converged_at.is_none() && self.points.len() >= 10 {
            let recent = &self.points[self.points.len() - 10..];
            let mean: f64 = recent.iter().map(|p| p.success_rate).sum::<f64>() / 10.0;
            if mean >= 0.98 {
                self.converged_at = Some(env_steps);
            }
        }
    }

    /// JSONL of `{env_steps, success_rate}` per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        for p in &self.points {
            writeln!(out, "{}", serde_json::to_string(p)?).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// First evaluation point reaching success rate `threshold`.
pub fn steps_to_threshold(curve: &TrainingCurve, threshold: f64) -> Result<Option<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in (0, 1]"
        )));
    }
    Ok(curve
        .points
        .iter()
        .find(|p| p.success_rate >= threshold)
        .map(|p| p.env_steps))
}

/// The policy never sees pixels: observations are the world state plus
/// normalized time and the task-relevant distance.
pub fn observe(state: &WorldState, task: &TaskSpec) -> [f32; 8] {
    let target_dist = match task.verb {
        Verb::Push => crate::taskworld::env::dist(state.object_pos, state.goal_pos),
        Verb::Reach => crate::taskworld::env::dist(state.agent_pos, state.object_pos),
    };
    [
        state.agent_pos[0] as f32,
        state.agent_pos[1] as f32,
        state.object_pos[0] as f32,
        state.object_pos[1] as f32,
        state.goal_pos[0] as f32,
        state.goal_pos[1] as f32,
        1.0 - state.step_index as f32 / HORIZON as f32,
        target_dist as f32,
    ]
}

/// A trained policy: the actor parameters plus enough structure to act.
pub struct SacPolicy {
    nets: SacNets,
}

impl SacPolicy {
    pub fn act(&self, obs: [f32; 8], noise: Option<[f32; 2]>) -> [f64; 2] {
        SacPolicyView { nets: &self.nets }.act(obs, noise)
    }

    pub fn save(&self, dir: &Path, meta: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::critic::save_weights(&self.nets.store, &dir.join("policy.bin"))?;
        let meta_path = dir.join("policy.json");
        std::fs::write(&meta_path, serde_json::to_vec_pretty(meta)?)
            .map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }
}

/// Deterministic-action rollouts on seeded resets; success means the sparse
/// reward fired before the horizon.
pub fn evaluate_policy(
    policy: &SacPolicy,
    task: &TaskSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be >= 1".into()));
    }
    let mut successes = 0usize;
    for e in 0..n_episodes {
        let mut state = reset(task, child_seed(seed, "eval-episode", e as u64));
        loop {
            let action = policy.act(observe(&state, task), None);
            let (next, reward, done) = step(&state, action, task)?;
            state = next;
            if reward > 0.0 {
                successes += 1;
                break;
            }
            if done {
                break;
            }
        }
    }
    Ok(successes as f64 / n_episodes as f64)
}

/// Standard SAC with automatic entropy tuning. The reward per step comes from
/// the configured source; evaluation rollouts never touch the replay buffer or
/// the normalizer statistics.
pub fn sac_train(
    task: &TaskSpec,
    cfg: &RLConfig,
    critic: Option<&CriticModel<f32>>,
) -> Result<(SacPolicy, TrainingCurve)> {
    cfg.validate()?;
    if cfg.reward_source == RewardSource::VlcPlusSparse && critic.is_none() {
        return Err(Error::InvalidArgument(
            "dense reward source requires a critic checkpoint".into(),
        ));
    }
    let mut rng = rng_from(child_seed(cfg.seed, "sac", 0));
    let mut nets = SacNets::init(&cfg.hidden, &mut rng);
    let mut actor_opt = sac::FilteredAdam::new(&nets.store, cfg.lr);
    let mut critic_opt = sac::FilteredAdam::new(&nets.store, cfg.lr);
    let mut alpha_opt = crate::nn::adam::ScalarAdam::new(cfg.lr);
    let mut log_alpha: f64 = 0.0;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut curve = TrainingCurve::default();

    let mut adapter = match cfg.reward_source {
        RewardSource::Sparse => RewardAdapter::sparse_only(cfg.gamma, cfg.reward),
        RewardSource::VlcPlusSparse => RewardAdapter::with_critic(
            critic.expect("checked above"),
            &task.caption,
            cfg.gamma,
            cfg.reward,
        )?,
    };
    let dense = cfg.reward_source == RewardSource::VlcPlusSparse;

    let mut env_steps = 0usize;
    let mut episode_idx = 0u64;
    'outer: while env_steps < cfg.total_steps {
        let mut state = reset(task, child_seed(cfg.seed, "train-episode", episode_idx));
        episode_idx += 1;
        adapter.begin_episode();
        if dense {
            adapter.prime(render(&state, task));
        }
        loop {
            let obs = observe(&state, task);
            let action = if env_steps < cfg.learning_starts {
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            } else {
                let noise = [
                    <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng),
                    <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng),
                ];
                let policy = SacPolicyView { nets: &nets };
                policy.act(obs, Some(noise))
            };
            let (next, sparse, done) = step(&state, action, task)?;
            let terminal = sparse > 0.0;
            let frame = if dense { Some(render(&next, task)) } else { None };
            let reward = adapter.step(frame, sparse, done)?;
            replay.push(Transition {
                obs,
                action: [action[0] as f32, action[1] as f32],
                reward: reward as f32,
                next_obs: observe(&next, task),
                terminal,
            });
            state = next;
            env_steps += 1;

            if env_steps >= cfg.learning_starts
                && env_steps % cfg.update_every == 0
                && replay.len() >= cfg.batch_size
            {
                update_step(
                    &mut nets,
                    &mut actor_opt,
                    &mut critic_opt,
                    &mut alpha_opt,
                    &mut log_alpha,
                    &replay,
                    cfg,
                    &mut rng,
                    env_steps,
                )?;
            }

            if env_steps % cfg.eval_every == 0 {
                let policy = SacPolicy {
                    nets: nets.snapshot(),
                };
                let rate = evaluate_policy(
                    &policy,
                    task,
                    cfg.eval_episodes,
                    child_seed(cfg.seed, "eval", env_steps as u64),
                )?;
                curve.push(env_steps, rate);
                if cfg.stop_on_convergence && curve.converged_at.is_some() {
                    break 'outer;
                }
            }
            if done || env_steps >= cfg.total_steps {
                break;
            }
        }
    }
    Ok((SacPolicy { nets }, curve))
}

/// Borrowing view used for action selection during training.
struct SacPolicyView<'a> {
    nets: &'a SacNets,
}

impl SacPolicyView<'_> {
    fn act(&self, obs: [f32; 8], noise: Option<[f32; 2]>) -> [f64; 2] {
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let obs_node = g.constant(Array2::from_shape_vec((1, OBS_DIM), obs.to_vec()).unwrap());
        let n = noise.unwrap_or([0.0, 0.0]);
        let noise_arr = Array2::from_shape_vec((1, 2), n.to_vec()).unwrap();
        let (action, _, det) = sac::actor_forward(
            &mut g,
            &mut cache,
            &self.nets.store,
            &self.nets.actor,
            obs_node,
            &noise_arr,
        );
        let node = if noise.is_some() { action } else { det };
        let v = g.value(node);
        [v[[0, 0]] as f64, v[[0, 1]] as f64]
    }
}

#[allow(clippy::too_many_arguments)]
fn update_step(
    nets: &mut SacNets,
    actor_opt: &mut sac::FilteredAdam,
    critic_opt: &mut sac::FilteredAdam,
    alpha_opt: &mut crate::nn::adam::ScalarAdam,
    log_alpha: &mut f64,
    replay: &ReplayBuffer,
    cfg: &RLConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
    env_steps: usize,
) -> Result<()> {
    let batch = replay.sample(rng, cfg.batch_size);
    let b = batch.len();
    let mut obs = Array2::<f32>::zeros((b, OBS_DIM));
    let mut next_obs = Array2::<f32>::zeros((b, OBS_DIM));
    let mut actions = Array2::<f32>::zeros((b, 2));
    let mut rewards = vec![0.0f32; b];
    let mut terminal = vec![false; b];
    for (i, t) in batch.iter().enumerate() {
        for j in 0..OBS_DIM {
            obs[[i, j]] = t.obs[j];
            next_obs[[i, j]] = t.next_obs[j];
        }
        actions[[i, 0]] = t.action[0];
        actions[[i, 1]] = t.action[1];
        rewards[i] = t.reward;
        terminal[i] = t.terminal;
    }
    let alpha = log_alpha.exp() as f32;

    let noise = |rng: &mut rand_chacha::ChaCha8Rng| {
        Array2::from_shape_fn((b, 2), |_| {
            <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng)
        })
    };

    // target values (no gradient)
    let y = {
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let next_node = g.constant(next_obs.clone());
        let (a2, logp2, _) =
            sac::actor_forward(&mut g, &mut cache, &nets.store, &nets.actor, next_node, &noise(rng));
        let tq1 = sac::resolve_mlp(&nets.target, "q1", nets.hidden_layers + 1);
        let tq2 = sac::resolve_mlp(&nets.target, "q2", nets.hidden_layers + 1);
        let mut tcache = NodeCache::new();
        // target store params enter the same graph as fresh leaves
        let q1v = {
            let x = g.concat_cols(&[next_node, a2]);
            sac::mlp_forward(&mut g, &mut tcache, &nets.target, x, &tq1)
        };
        let q2v = {
            let x = g.concat_cols(&[next_node, a2]);
            sac::mlp_forward(&mut g, &mut tcache, &nets.target, x, &tq2)
        };
        let qmin = g.minimum(q1v, q2v);
        let ent = g.scale(logp2, alpha);
        let soft = g.sub(qmin, ent);
        let v = g.value(soft);
        let mut y = vec![0.0f32; b];
        for i in 0..b {
            let cont = if terminal[i] { 0.0 } else { cfg.gamma as f32 };
            y[i] = rewards[i] + cont * v[[i, 0]];
        }
        y
    };

    // critic update
    let critic_loss = {
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let obs_node = g.constant(obs.clone());
        let act_node = g.constant(actions.clone());
        let y_node = g.constant(Array2::from_shape_vec((b, 1), y).unwrap());
        let q1 = sac::q_forward(&mut g, &mut cache, &nets.store, &nets.q1, obs_node, act_node);
        let q2 = sac::q_forward(&mut g, &mut cache, &nets.store, &nets.q2, obs_node, act_node);
        let d1 = g.sub(q1, y_node);
        let d2 = g.sub(q2, y_node);
        let s1 = g.square(d1);
        let s2 = g.square(d2);
        let m1 = g.mean_all(s1);
        let m2 = g.mean_all(s2);
        let loss = g.add(m1, m2);
        let value = g.scalar_value(loss);
        let grads = g.backward(loss);
        critic_opt.step_where(&mut nets.store, &grads, |n| {
            n.starts_with("q1.") || n.starts_with("q2.")
        });
        value as f64
    };

    // actor + temperature update
    let actor_loss = {
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let obs_node = g.constant(obs);
        let (a, logp, _) =
            sac::actor_forward(&mut g, &mut cache, &nets.store, &nets.actor, obs_node, &noise(rng));
        let q1 = sac::q_forward(&mut g, &mut cache, &nets.store, &nets.q1, obs_node, a);
        let q2 = sac::q_forward(&mut g, &mut cache, &nets.store, &nets.q2, obs_node, a);
        let qmin = g.minimum(q1, q2);
        let ent = g.scale(logp, alpha);
        let term = g.sub(ent, qmin);
        let loss = g.mean_all(term);
        let value = g.scalar_value(loss);
        let grads = g.backward(loss);
        actor_opt.step_where(&mut nets.store, &grads, |n| n.starts_with("actor."));

        // alpha step on the same log-probs
        let lp = g.value(logp);
        let mean_term: f64 = (0..b)
            .map(|i| lp[[i, 0]] as f64 + cfg.entropy_target)
            .sum::<f64>()
            / b as f64;
        alpha_opt.step(log_alpha, -mean_term * log_alpha.exp());
        value as f64
    };

    if !critic_loss.is_finite() || !actor_loss.is_finite() {
        return Err(Error::Diverged {
            step: env_steps,
            msg: format!("critic loss {critic_loss}, actor loss {actor_loss}"),
        });
    }
    nets.soft_update(cfg.tau as f32);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::enumerate_tasks;

    #[test]
    fn gamma_bounds_rejected() {
        for gamma in [0.0, 1.0, -0.5, 1.5] {
            let cfg = RLConfig {
                gamma,
                ..Default::default()
            };
            assert!(cfg.validate().is_err(), "gamma {gamma}");
        }
    }

    #[test]
    fn steps_to_threshold_cases() {
        let curve = TrainingCurve {
            points: vec![
                CurvePoint { env_steps: 1000, success_rate: 0.2 },
                CurvePoint { env_steps: 2000, success_rate: 0.95 },
            ],
            converged_at: None,
        };
        assert_eq!(steps_to_threshold(&curve, 0.9).unwrap(), Some(2000));
        assert_eq!(steps_to_threshold(&curve, 0.99).unwrap(), None);
        assert!(steps_to_threshold(&curve, 0.0).is_err());
        assert!(steps_to_threshold(&curve, 1.2).is_err());
    }

    #[test]
    fn observation_has_no_pixels_and_fixed_dim() {
        let task = &enumerate_tasks()[0];
        let s = reset(task, 3);
        let obs = observe(&s, task);
        assert_eq!(obs.len(), 8);
        assert!(obs.iter().all(|v| v.is_finite() && v.abs() <= 2.0));
    }

    #[test]
    fn expert_scores_high_random_scores_low() {
        // evaluate_policy sanity at both extremes, via policies wrapped as SAC nets
        let task = &enumerate_tasks()[0]; // push task
        let mut ok = 0;
        for e in 0..40 {
            let mut state = reset(task, child_seed(123, "eval-episode", e));
            loop {
                let a = crate::taskworld::expert_action(&state, task);
                let (next, r, done) = step(&state, a, task).unwrap();
                state = next;
                if r > 0.0 {
                    ok += 1;
                    break;
                }
                if done {
                    break;
                }
            }
        }
        assert!(ok as f64 / 40.0 >= 0.95);

        // fresh random policy on a push task is near-chance
        let mut rng = rng_from(0);
        let nets = SacNets::init(&[32, 32], &mut rng);
        let policy = SacPolicy { nets };
        let rate = evaluate_policy(&policy, task, 20, 7).unwrap();
        assert!(rate <= 0.2, "untrained policy rate {rate}");
        assert!(evaluate_policy(&policy, task, 0, 7).is_err());
        let single = evaluate_policy(&policy, task, 1, 7).unwrap();
        assert!(single == 0.0 || single == 1.0);
    }

    #[test]
    fn short_sparse_run_is_deterministic() {
        let task = &enumerate_tasks()[0];
        let cfg = RLConfig {
            total_steps: 600,
            eval_every: 300,
            eval_episodes: 3,
            hidden: vec![16, 16],
            batch_size: 32,
            learning_starts: 100,
            seed: 5,
            ..Default::default()
        };
        let (_, a) = sac_train(task, &cfg, None).unwrap();
        let (_, b) = sac_train(task, &cfg, None).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (x, y) in a.points.iter().zip(b.points.iter()) {
            assert_eq!(x.env_steps, y.env_steps);
            assert_eq!(x.success_rate, y.success_rate);
        }
    }

    #[test]
    fn dense_source_requires_critic() {
        let task = &enumerate_tasks()[0];
        let cfg = RLConfig {
            reward_source: RewardSource::VlcPlusSparse,
            total_steps: 10,
            ..Default::default()
        };
        assert!(sac_train(task, &cfg, None).is_err());
    }
}
