//! Critic-quality evaluations: scene-matched 1-vs-K trajectory ranking,
//! prefix-score monotonicity, robustness under visual perturbation, and
//! reward-curve export.

pub mod curves;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::CriticModel;
use crate::dataio::{subsample_indices, FrameSampleConfig};
use crate::seeds::{child_seed, rng_from};
use crate::taskworld::{
    generate_episode, perturb_frame, EpisodeRecord, ExpertPolicy, Frame, TargetedExpert, TaskSpec,
};
use crate::{Error, Result};

pub use curves::export_reward_curves;

/// One successful trajectory plus k scene-matched failures (same reset seed,
/// wrong targets).
#[derive(Debug, Clone)]
pub struct EpisodeGroup {
    pub success_episode: EpisodeRecord,
    pub failure_episodes: Vec<EpisodeRecord>,
    pub caption: String,
}

/// Build `n_groups` groups for one task. Failures are expert-controller
/// rollouts toward uniformly sampled wrong targets, rejected (and resampled)
/// if they accidentally satisfy the true success predicate.
pub fn build_primitive_groups(
    task: &TaskSpec,
    n_groups: usize,
    k_failures: usize,
    seed: u64,
) -> Result<Vec<EpisodeGroup>> {
    if k_failures == 0 {
        return Err(Error::InvalidArgument("groups need at least one failure".into()));
    }
    let mut groups = Vec::with_capacity(n_groups);
    let mut reset_i = 0u64;
    while groups.len() < n_groups {
        let reset_seed = child_seed(seed, "group-reset", reset_i);
        reset_i += 1;
        if reset_i > 20 * n_groups as u64 {
            return Err(Error::InvalidArgument(format!(
                "could not assemble {n_groups} groups for task {}",
                task.task_id
            )));
        }
        let success = generate_episode(task, &mut ExpertPolicy, reset_seed)?;
        if !success.success {
            continue;
        }
        let mut failures = Vec::with_capacity(k_failures);
        for k in 0..k_failures {
            let mut accepted = None;
            for attempt in 0..32u64 {
                let mut rng = rng_from(child_seed(
                    seed,
                    "group-target",
                    reset_i * 10_000 + k as u64 * 100 + attempt,
                ));
                let target = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
                let mut policy = TargetedExpert { target };
                let ep = generate_episode(task, &mut policy, reset_seed)?;
                if !ep.success {
                    accepted = Some(ep);
                    break;
                }
            }
            match accepted {
                Some(ep) => failures.push(ep),
                None => break,
            }
        }
        if failures.len() == k_failures {
            groups.push(EpisodeGroup {
                success_episode: success,
                failure_episodes: failures,
                caption: task.caption.clone(),
            });
        }
    }
    Ok(groups)
}

fn subsampled(frames: &[Frame], sampling: &FrameSampleConfig) -> Result<Vec<Frame>> {
    let idx = subsample_indices(frames.len(), sampling, 0)?;
    Ok(idx.into_iter().map(|i| frames[i].clone()).collect())
}

/// Fraction of groups whose success strictly outscores every failure.
/// Ties count as incorrect.
pub fn ranking_accuracy(
    model: &CriticModel<f32>,
    groups: &[EpisodeGroup],
    sampling: &FrameSampleConfig,
) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no groups to rank".into()));
    }
    let mut correct = 0usize;
    for group in groups {
        let succ_frames = subsampled(&group.success_episode.frames, sampling)?;
        let fail_frames: Vec<Vec<Frame>> = group
            .failure_episodes
            .iter()
            .map(|e| subsampled(&e.frames, sampling))
            .collect::<Result<_>>()?;
        let mut items: Vec<(&[Frame], &str)> = vec![(&succ_frames, group.caption.as_str())];
        for f in &fail_frames {
            items.push((f, group.caption.as_str()));
        }
        let scores = model.score_batch(&items)?;
        let success_score = scores[0];
        let best_failure = scores[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if success_score > best_failure {
            correct += 1;
        }
    }
    Ok(correct as f64 / groups.len() as f64)
}

/// Tolerance below which a prefix-score decrease is treated as float noise.
pub const MONOTONICITY_TOL: f64 = 1e-6;

/// Average fraction of consecutive prefix-score pairs that are non-decreasing
/// over deterministic 12-frame subsamples of successful episodes. Episodes
/// with a single sampled frame count as fully monotone.
pub fn monotonicity_rate(
    model: &CriticModel<f32>,
    success_episodes: &[&EpisodeRecord],
    sampling: &FrameSampleConfig,
) -> Result<f64> {
    if success_episodes.is_empty() {
        return Err(Error::InvalidArgument("no episodes for monotonicity".into()));
    }
    let mut total = 0.0;
    for ep in success_episodes {
        let caption = ep.caption.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "monotonicity is defined over captioned successes; episode of task {} has none",
                ep.task_id
            ))
        })?;
        let frames = subsampled(&ep.frames, sampling)?;
        let ps = model.score_prefixes(&frames, caption)?;
        let pairs = ps.scores.len().saturating_sub(1);
        if pairs == 0 {
            total += 1.0;
            continue;
        }
        let ok = ps
            .scores
            .windows(2)
            .filter(|w| w[1] >= w[0] - MONOTONICITY_TOL)
            .count();
        total += ok as f64 / pairs as f64;
    }
    Ok(total / success_episodes.len() as f64)
}

/// One row of the robustness report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub split: String,
    pub perturbation: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

/// Perturb an episode's frames with per-original-frame seeds, so perturbation
/// commutes with subsampling.
pub fn perturb_episode(ep: &EpisodeRecord, brightness: f64, noise_high: f64, seed: u64) -> EpisodeRecord {
    let ep_seed = child_seed(seed, "episode-perturb", ep.seed ^ (ep.frames.len() as u64) << 32);
    let frames = ep
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| perturb_frame(f, brightness, noise_high, child_seed(ep_seed, "frame", i as u64)))
        .collect();
    EpisodeRecord {
        frames,
        ..ep.clone()
    }
}

/// Ranking accuracy and monotonicity per perturbation level, as report rows.
pub fn robustness_report(
    model: &CriticModel<f32>,
    groups: &[EpisodeGroup],
    split: &str,
    perturbations: &[(f64, f64)],
    sampling: &FrameSampleConfig,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &(brightness, noise_high) in perturbations {
        let perturbed: Vec<EpisodeGroup> = groups
            .iter()
            .map(|g| EpisodeGroup {
                success_episode: perturb_episode(&g.success_episode, brightness, noise_high, seed),
                failure_episodes: g
                    .failure_episodes
                    .iter()
                    .map(|e| perturb_episode(e, brightness, noise_high, seed))
                    .collect(),
                caption: g.caption.clone(),
            })
            .collect();
        let acc = ranking_accuracy(model, &perturbed, sampling)?;
        let successes: Vec<&EpisodeRecord> = perturbed
            .iter()
            .map(|g| &g.success_episode)
            .filter(|e| e.caption.is_some())
            .collect();
        let mono = monotonicity_rate(model, &successes, sampling)?;
        let tag = format!("brightness={brightness},noise={noise_high}");
        rows.push(ReportRow {
            metric: "ranking_accuracy".into(),
            split: split.to_string(),
            perturbation: tag.clone(),
            value: acc,
            n: perturbed.len(),
            seed,
        });
        rows.push(ReportRow {
            metric: "monotonicity_rate".into(),
            split: split.to_string(),
            perturbation: tag,
            value: mono,
            n: successes.len(),
            seed,
        });
    }
    Ok(rows)
}

/// Aggregate evaluation of one task set: scene-matched ranking, monotonicity,
/// and a robustness row pair per perturbation level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub split: String,
    pub ranking_accuracy: f64,
    pub monotonicity_rate: f64,
    pub per_task_accuracy: std::collections::BTreeMap<String, f64>,
    pub rows: Vec<ReportRow>,
    pub n_groups: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    model: &CriticModel<f32>,
    tasks: &[TaskSpec],
    groups_per_task: usize,
    k_failures: usize,
    perturbations: &[(f64, f64)],
    sampling: &FrameSampleConfig,
    seed: u64,
    split: &str,
) -> Result<SplitEvaluation> {
    if tasks.is_empty() || groups_per_task == 0 {
        return Err(Error::InvalidArgument(
            "split evaluation needs at least one task and one group".into(),
        ));
    }
    let mut all_groups = Vec::new();
    let mut per_task_accuracy = std::collections::BTreeMap::new();
    for task in tasks {
        let groups = build_primitive_groups(
            task,
            groups_per_task,
            k_failures,
            child_seed_str(seed, "split-eval", &task.task_id),
        )?;
        let acc = ranking_accuracy(model, &groups, sampling)?;
        per_task_accuracy.insert(task.task_id.clone(), acc);
        all_groups.extend(groups);
    }
    let ranking = ranking_accuracy(model, &all_groups, sampling)?;
    let successes: Vec<&EpisodeRecord> = all_groups.iter().map(|g| &g.success_episode).collect();
    let monotonicity = monotonicity_rate(model, &successes, sampling)?;
    let rows = robustness_report(model, &all_groups, split, perturbations, sampling, seed)?;
    Ok(SplitEvaluation {
        split: split.to_string(),
        ranking_accuracy: ranking,
        monotonicity_rate: monotonicity,
        per_task_accuracy,
        rows,
        n_groups: all_groups.len(),
    })
}

use crate::seeds::child_seed_str;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{CriticConfig, Vocab};
    use crate::taskworld::enumerate_tasks;

    fn tiny_model(seed: u64) -> CriticModel<f32> {
        let cfg = CriticConfig {
            embed_dim: 16,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 1,
            temporal_heads: 2,
            frame_patch: 16,
            ..Default::default()
        };
        let vocab = Vocab::build(enumerate_tasks().iter().map(|t| t.caption.as_str()));
        CriticModel::init(cfg, vocab, seed).unwrap()
    }

    #[test]
    fn groups_have_expected_shape() {
        let task = &enumerate_tasks()[0];
        let groups = build_primitive_groups(task, 3, 5, 7).unwrap();
        assert_eq!(groups.len(), 3);
        for g in &groups {
            assert!(g.success_episode.success);
            assert_eq!(g.failure_episodes.len(), 5);
            for f in &g.failure_episodes {
                assert!(!f.success, "failure episodes must fail the true predicate");
                assert_eq!(f.states[0], g.success_episode.states[0], "same reset");
            }
        }
    }

    #[test]
    fn groups_are_deterministic() {
        let task = &enumerate_tasks()[3];
        let a = build_primitive_groups(task, 2, 3, 11).unwrap();
        let b = build_primitive_groups(task, 2, 3, 11).unwrap();
        assert_eq!(a[0].success_episode, b[0].success_episode);
        assert_eq!(a[1].failure_episodes[2], b[1].failure_episodes[2]);
    }

    #[test]
    fn ranking_of_random_model_is_imperfect_and_in_range() {
        let model = tiny_model(0);
        let task = &enumerate_tasks()[0];
        let groups = build_primitive_groups(task, 4, 2, 3).unwrap();
        let acc = ranking_accuracy(&model, &groups, &FrameSampleConfig::default()).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn monotonicity_hand_values() {
        // counted directly from the definition: scores [0, 1, 0.5, 2] -> 2/3
        let scores = [0.0, 1.0, 0.5, 2.0];
        let ok = scores.windows(2).filter(|w| w[1] >= w[0] - MONOTONICITY_TOL).count();
        assert_eq!(ok, 2);
        assert_eq!(scores.len() - 1, 3);
    }

    #[test]
    fn monotonicity_of_single_frame_episode_is_one() {
        let model = tiny_model(0);
        let task = &enumerate_tasks()[0];
        let mut ep = generate_episode(task, &mut ExpertPolicy, 3).unwrap();
        ep.frames.truncate(1);
        let rate = monotonicity_rate(&model, &[&ep], &FrameSampleConfig::default()).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn robustness_identity_row_matches_unperturbed() {
        let model = tiny_model(1);
        let task = &enumerate_tasks()[0];
        let groups = build_primitive_groups(task, 3, 2, 5).unwrap();
        let sampling = FrameSampleConfig::default();
        let rows = robustness_report(&model, &groups, "train", &[(1.0, 0.0), (0.5, 0.2)], &sampling, 9).unwrap();
        assert_eq!(rows.len(), 4);
        let base_acc = ranking_accuracy(&model, &groups, &sampling).unwrap();
        let identity_acc = rows
            .iter()
            .find(|r| r.metric == "ranking_accuracy" && r.perturbation.starts_with("brightness=1"))
            .unwrap();
        assert_eq!(identity_acc.value, base_acc);
        for r in &rows {
            assert!(r.value.is_finite());
        }
    }

    #[test]
    fn perturbation_commutes_with_subsampling() {
        let task = &enumerate_tasks()[0];
        let ep = generate_episode(task, &mut ExpertPolicy, 3).unwrap();
        let pre = perturb_episode(&ep, 0.7, 0.1, 42);
        let cfg = FrameSampleConfig::default();
        let idx = subsample_indices(ep.frames.len(), &cfg, 0).unwrap();
        // perturb-then-subsample
        let a: Vec<Frame> = idx.iter().map(|&i| pre.frames[i].clone()).collect();
        // subsample-then-perturb, seeding by original index
        let ep_seed = child_seed(42, "episode-perturb", ep.seed ^ (ep.frames.len() as u64) << 32);
        let b: Vec<Frame> = idx
            .iter()
            .map(|&i| perturb_frame(&ep.frames[i], 0.7, 0.1, child_seed(ep_seed, "frame", i as u64)))
            .collect();
        assert_eq!(a, b);
    }
}
