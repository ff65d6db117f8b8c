use serde::{Deserialize, Serialize};

use super::batch::EpisodePool;
use crate::critic::{tokenize, CriticModel, TokenizedCaption};
use crate::dataio::{subsample_indices, DatasetReader, FrameSampleConfig};
use crate::evalsuite;
use crate::nn::graph::Graph;
use crate::nn::layers::NodeCache;
use crate::seeds::child_seed;
use crate::taskworld::{task_by_id, Frame};
use crate::{Error, Result};

/// Candidate-pool size for the video-to-text selection metric; fixes the
/// chance floor at ln 16 regardless of dataset size.
pub const V2T_POOL: usize = 16;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValMetrics {
    pub v2t_xent: f64,
    pub ranking_accuracy: f64,
    pub monotonicity_rate: f64,
}

/// Build distinct-caption pools of up to [`V2T_POOL`] episodes by round-robin
/// over caption groups, in deterministic manifest order.
fn build_pools(pool: &EpisodePool) -> Vec<Vec<usize>> {
    let mut queues: Vec<std::collections::VecDeque<usize>> = pool
        .by_caption
        .values()
        .map(|v| v.iter().copied().collect())
        .collect();
    let mut pools = Vec::new();
    loop {
        let mut current = Vec::new();
        for q in queues.iter_mut() {
            if current.len() == V2T_POOL {
                break;
            }
            if let Some(i) = q.pop_front() {
                current.push(i);
            }
        }
        if current.is_empty() {
            break;
        }
        pools.push(current);
    }
    pools
}

/// Video-to-text cross-entropy over fixed-size candidate pools, plus ranking
/// and monotonicity metrics delegated to the evaluation suite. Deterministic:
/// midpoint sampling, no augmentation.
pub fn validate(
    model: &CriticModel<f32>,
    val_reader: &DatasetReader,
    eval_sampling: &FrameSampleConfig,
    val_groups: usize,
    seed: u64,
) -> Result<ValMetrics> {
    let pool = EpisodePool::new(val_reader);
    if pool.success_idx.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let pools = build_pools(&pool);
    let mut total = 0.0;
    let mut n_pools = 0usize;
    for pool_indices in &pools {
        // pools smaller than 2 carry no signal; skip stragglers
        if pool_indices.len() < 2 && pools.len() > 1 {
            continue;
        }
        let mut captions: Vec<TokenizedCaption> = Vec::with_capacity(pool_indices.len());
        let mut videos: Vec<Vec<Frame>> = Vec::with_capacity(pool_indices.len());
        for &i in pool_indices {
            let ep = val_reader.load(i)?;
            let caption = ep.caption.as_deref().expect("success pool is captioned");
            captions.push(tokenize(caption, &model.vocab)?);
            let idx = subsample_indices(ep.frames.len(), eval_sampling, 0)?;
            videos.push(idx.into_iter().map(|t| ep.frames[t].clone()).collect());
        }
        let n = pool_indices.len();
        // rows = videos, candidates = captions: pair (caption j, video i)
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (j, i)))
            .collect();
        let video_refs: Vec<&[Frame]> = videos.iter().map(|v| v.as_slice()).collect();
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let ps = model.score_pairs_node(&mut g, &mut cache, &captions, &video_refs, &pairs)?;
        let final_rows: Vec<usize> = (0..pairs.len()).map(|p| ps.final_row(p)).collect();
        let finals = g.select_rows(ps.prefix, final_rows);
        let rows = g.reshape(finals, n, n);
        let diag: Vec<usize> = (0..n).collect();
        let loss = crate::objective::xent_directional_node(&mut g, rows, diag);
        total += g.scalar_value(loss) as f64;
        n_pools += 1;
    }
    let v2t_xent = total / n_pools.max(1) as f64;

    // scene-matched ranking groups regenerated from (task, seed) of a sample
    // of validation successes
    let n_groups = val_groups.min(pool.success_idx.len());
    let mut groups = Vec::with_capacity(n_groups);
    for k in 0..n_groups {
        let entry = &val_reader.manifest.entries[pool.success_idx[k]];
        let task = task_by_id(&entry.task_id)?;
        let mut g =
            evalsuite::build_primitive_groups(&task, 1, 5, child_seed(seed, "val-group", k as u64))?;
        groups.append(&mut g);
    }
    let ranking_accuracy = evalsuite::ranking_accuracy(model, &groups, eval_sampling)?;

    let episodes: Vec<crate::taskworld::EpisodeRecord> = pool
        .success_idx
        .iter()
        .take(64)
        .map(|&i| val_reader.load(i))
        .collect::<Result<_>>()?;
    let refs: Vec<&crate::taskworld::EpisodeRecord> = episodes.iter().collect();
    let monotonicity_rate = evalsuite::monotonicity_rate(model, &refs, eval_sampling)?;

    Ok(ValMetrics {
        v2t_xent,
        ranking_accuracy,
        monotonicity_rate,
    })
}
