use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataio::{augment, subsample_indices, AugmentConfig, DatasetReader, FrameSampleConfig};
use crate::seeds::{child_seed, rng_from};
use crate::taskworld::Frame;
use crate::{Error, Result};

/// Index over a dataset split: which entries are captioned successes (grouped
/// by caption so batches can enforce caption distinctness) and which are
/// failures.
pub struct EpisodePool<'a> {
    pub reader: &'a DatasetReader,
    pub by_caption: BTreeMap<String, Vec<usize>>,
    pub failure_idx: Vec<usize>,
    pub success_idx: Vec<usize>,
}

impl<'a> EpisodePool<'a> {
    pub fn new(reader: &'a DatasetReader) -> EpisodePool<'a> {
        let mut by_caption: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut failure_idx = Vec::new();
        let mut success_idx = Vec::new();
        for (i, e) in reader.manifest.entries.iter().enumerate() {
            match &e.caption {
                Some(c) => {
                    by_caption.entry(c.clone()).or_default().push(i);
                    success_idx.push(i);
                }
                None => failure_idx.push(i),
            }
        }
        EpisodePool {
            reader,
            by_caption,
            failure_idx,
            success_idx,
        }
    }
}

/// One subsampled (and possibly augmented) video ready for scoring.
pub struct BatchItem {
    pub frames: Vec<Frame>,
    pub caption: Option<String>,
    pub episode_index: usize,
}

pub struct CriticBatch {
    pub successes: Vec<BatchItem>,
    pub failures: Vec<BatchItem>,
}

fn load_item(
    pool: &EpisodePool,
    index: usize,
    sampling: &FrameSampleConfig,
    augment_cfg: &AugmentConfig,
    item_seed: u64,
) -> Result<BatchItem> {
    let ep = pool.reader.load(index)?;
    let idx = subsample_indices(ep.frames.len(), sampling, child_seed(item_seed, "subsample", 0))?;
    let frames: Vec<Frame> = idx.into_iter().map(|t| ep.frames[t].clone()).collect();
    let frames = augment(&frames, augment_cfg, child_seed(item_seed, "augment", 0));
    Ok(BatchItem {
        frames,
        caption: ep.caption,
        episode_index: index,
    })
}

/// Sample `n_s` distinct-caption successes and `n_f` failures (all without
/// replacement within the batch), subsampled and augmented with per-item
/// seeds.
pub fn build_batch(
    pool: &EpisodePool,
    n_s: usize,
    n_f: usize,
    sampling: &FrameSampleConfig,
    augment_cfg: &AugmentConfig,
    step_seed: u64,
) -> Result<CriticBatch> {
    if pool.by_caption.len() < n_s {
        return Err(Error::InvalidArgument(format!(
            "need {n_s} distinct captions, dataset has {}",
            pool.by_caption.len()
        )));
    }
    if pool.failure_idx.len() < n_f {
        return Err(Error::InvalidArgument(format!(
            "need {n_f} failure episodes, dataset has {}",
            pool.failure_idx.len()
        )));
    }
    let mut rng = rng_from(child_seed(step_seed, "batch", 0));
    let mut captions: Vec<&String> = pool.by_caption.keys().collect();
    captions.shuffle(&mut rng);
    let mut successes = Vec::with_capacity(n_s);
    for (k, caption) in captions.into_iter().take(n_s).enumerate() {
        let candidates = &pool.by_caption[caption];
        let index = candidates[rng.random_range(0..candidates.len())];
        successes.push(load_item(
            pool,
            index,
            sampling,
            augment_cfg,
            child_seed(step_seed, "success-item", k as u64),
        )?);
    }
    let mut fail_indices = pool.failure_idx.clone();
    fail_indices.shuffle(&mut rng);
    let mut failures = Vec::with_capacity(n_f);
    for (k, index) in fail_indices.into_iter().take(n_f).enumerate() {
        failures.push(load_item(
            pool,
            index,
            sampling,
            augment_cfg,
            child_seed(step_seed, "failure-item", k as u64),
        )?);
    }
    Ok(CriticBatch {
        successes,
        failures,
    })
}

/// A (2-frame video, caption, label) item for the binary-classification
/// baseline.
pub struct BinaryItem {
    pub frames: Vec<Frame>,
    pub caption: String,
    pub label: f64,
}

fn first_and_last(frames: &[Frame]) -> Vec<Frame> {
    if frames.len() == 1 {
        vec![frames[0].clone()]
    } else {
        vec![frames[0].clone(), frames[frames.len() - 1].clone()]
    }
}

/// Classification batch: positives are (success, own caption); negatives are
/// mismatched captions, temporally reversed successes, and failures with
/// their task's caption. Conditioning is on the first and last frame.
pub fn build_binary_batch(
    pool: &EpisodePool,
    n_s: usize,
    n_f: usize,
    augment_cfg: &AugmentConfig,
    step_seed: u64,
) -> Result<Vec<BinaryItem>> {
    let sampling = FrameSampleConfig::deterministic(usize::MAX >> 1);
    let base = build_batch(pool, n_s, n_f, &sampling, &AugmentConfig::disabled(), step_seed)?;
    let mut items = Vec::new();
    for (k, item) in base.successes.iter().enumerate() {
        let caption = item.caption.clone().expect("successes are captioned");
        let full = &item.frames;
        let aug_seed = child_seed(step_seed, "binary-aug", k as u64);
        let two = augment(&first_and_last(full), augment_cfg, aug_seed);
        items.push(BinaryItem {
            frames: two.clone(),
            caption: caption.clone(),
            label: 1.0,
        });
        // mismatched caption: the next success's caption (distinct by batch rule)
        let other = base.successes[(k + 1) % base.successes.len()]
            .caption
            .clone()
            .expect("successes are captioned");
        if other != caption {
            items.push(BinaryItem {
                frames: two,
                caption: other,
                label: 0.0,
            });
        }
        // temporally reversed success
        let mut reversed = full.clone();
        reversed.reverse();
        items.push(BinaryItem {
            frames: augment(&first_and_last(&reversed), augment_cfg, aug_seed),
            caption,
            label: 0.0,
        });
    }
    for (k, item) in base.failures.iter().enumerate() {
        let task = crate::taskworld::task_by_id(
            &pool.reader.manifest.entries[item.episode_index].task_id,
        )?;
        items.push(BinaryItem {
            frames: augment(
                &first_and_last(&item.frames),
                augment_cfg,
                child_seed(step_seed, "binary-fail-aug", k as u64),
            ),
            caption: task.caption,
            label: 0.0,
        });
    }
    Ok(items)
}
