//! Mini-batch construction, the optimization loop, validation, and checkpoint
//! selection for the critic.

pub mod batch;
pub mod validate;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::{
    save_checkpoint, tokenize, CheckpointMeta, CriticConfig, CriticModel, TokenizedCaption, Vocab,
};
use crate::dataio::{AugmentConfig, DatasetReader, FrameSampleConfig, SampleMode};
use crate::nn::adam::AdamW;
use crate::nn::graph::Graph;
use crate::nn::layers::NodeCache;
use crate::objective::{
    bce_with_logits_node, total_loss_node, BatchScoreNodes, ObjectiveConfig, ObjectiveKind,
};
use crate::seeds::child_seed;
use crate::taskworld::Frame;
use crate::{Error, Result};

pub use batch::{build_batch, build_binary_batch, BatchItem, CriticBatch, EpisodePool};
pub use validate::{validate, ValMetrics, V2T_POOL};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_successes: usize,
    pub batch_failures: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub sampling: FrameSampleConfig,
    pub eval_sampling: FrameSampleConfig,
    pub augment: AugmentConfig,
    /// 0 = library default; 1 = strict single-threaded mode.
    pub num_threads: usize,
    /// Scene-matched groups regenerated per validation pass.
    pub val_groups: usize,
    /// Linear ramp of the ranking weight over the first epochs. From-scratch
    /// encoders otherwise collapse to constant scores: the hinge dominates the
    /// contrastive gradient at initialization and its cheapest zero sits at
    /// input-independent outputs.
    pub alpha_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_successes: 16,
            batch_failures: 8,
            epochs: 30,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            seed: 0,
            objective: ObjectiveConfig::default(),
            sampling: FrameSampleConfig {
                budget: 12,
                mode: SampleMode::RandomInInterval,
            },
            eval_sampling: FrameSampleConfig {
                budget: 12,
                mode: SampleMode::DeterministicMidpoint,
            },
            augment: AugmentConfig::default(),
            num_threads: 0,
            val_groups: 16,
            alpha_warmup_epochs: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_successes < 2 {
            return Err(Error::Config(
                "contrastive training needs at least 2 successes per batch".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.objective.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

/// Per-epoch record returned by [`train`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochCheckpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub metrics: ValMetrics,
    pub dir: Option<PathBuf>,
}

/// The checkpoint minimizing validation video-to-text cross-entropy; ties go
/// to the earliest epoch.
pub fn select_checkpoint(checkpoints: &[EpochCheckpoint]) -> Result<&EpochCheckpoint> {
    checkpoints
        .iter()
        .min_by(|a, b| {
            a.metrics
                .v2t_xent
                .partial_cmp(&b.metrics.v2t_xent)
                .expect("finite metric")
                .then(a.epoch.cmp(&b.epoch))
        })
        .ok_or_else(|| Error::InvalidArgument("no checkpoints to select from".into()))
}

/// Build the full training loss graph for one contrastive batch: the pair
/// score grid, the symmetric cross-entropy over it, and the ranking hinge on
/// each success video's own-caption prefix scores.
pub fn contrastive_loss_graph<R: crate::nn::Real>(
    model: &CriticModel<R>,
    captions: &[TokenizedCaption],
    success_videos: &[&[Frame]],
    failure_videos: &[&[Frame]],
    objective: &ObjectiveConfig,
) -> Result<(Graph<R>, crate::nn::NodeId)> {
    let n_s = success_videos.len();
    let n_f = failure_videos.len();
    assert_eq!(captions.len(), n_s, "one caption per success video");
    let videos: Vec<&[Frame]> = success_videos
        .iter()
        .chain(failure_videos.iter())
        .copied()
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n_s)
        .flat_map(|i| (0..n_s + n_f).map(move |j| (i, j)))
        .collect();
    let mut g = Graph::new();
    let mut cache = NodeCache::new();
    let ps = model.score_pairs_node(&mut g, &mut cache, captions, &videos, &pairs)?;
    let final_rows: Vec<usize> = (0..pairs.len()).map(|p| ps.final_row(p)).collect();
    let finals = g.select_rows(ps.prefix, final_rows);
    let t2v = g.reshape(finals, n_s, n_s + n_f);
    let succ_rows: Vec<usize> = (0..n_s)
        .flat_map(|i| (0..n_s).map(move |j| i * (n_s + n_f) + j))
        .collect();
    let finals2 = g.select_rows(ps.prefix, succ_rows.iter().map(|&p| ps.final_row(p)).collect());
    let success = g.reshape(finals2, n_s, n_s);
    let prefix: Vec<_> = (0..n_s)
        .map(|i| {
            let p = i * (n_s + n_f) + i;
            let rows: Vec<usize> =
                (ps.pair_offsets[p]..ps.pair_offsets[p] + ps.pair_lens[p]).collect();
            g.select_rows(ps.prefix, rows)
        })
        .collect();
    let nodes = BatchScoreNodes {
        t2v,
        success,
        prefix,
    };
    let loss = total_loss_node(&mut g, &nodes, objective);
    Ok((g, loss))
}

fn contrastive_step(
    model: &CriticModel<f32>,
    pool: &EpisodePool,
    cfg: &TrainConfig,
    objective: &ObjectiveConfig,
    opt: &mut AdamW<f32>,
    params: &mut crate::nn::ParamStore<f32>,
    step_seed: u64,
) -> Result<f64> {
    let batch = build_batch(
        pool,
        cfg.batch_successes,
        cfg.batch_failures,
        &cfg.sampling,
        &cfg.augment,
        step_seed,
    )?;
    let captions: Vec<TokenizedCaption> = batch
        .successes
        .iter()
        .map(|i| tokenize(i.caption.as_deref().expect("captioned"), &model.vocab))
        .collect::<Result<_>>()?;
    let success_videos: Vec<&[Frame]> = batch.successes.iter().map(|i| i.frames.as_slice()).collect();
    let failure_videos: Vec<&[Frame]> = batch.failures.iter().map(|i| i.frames.as_slice()).collect();
    let (g, loss) =
        contrastive_loss_graph(model, &captions, &success_videos, &failure_videos, objective)?;
    let loss_value = g.scalar_value(loss) as f64;
    let grads = g.backward(loss);
    opt.step(params, &grads);
    Ok(loss_value)
}

fn binary_step(
    model: &CriticModel<f32>,
    pool: &EpisodePool,
    cfg: &TrainConfig,
    opt: &mut AdamW<f32>,
    params: &mut crate::nn::ParamStore<f32>,
    step_seed: u64,
) -> Result<f64> {
    let items = build_binary_batch(
        pool,
        cfg.batch_successes,
        cfg.batch_failures,
        &cfg.augment,
        step_seed,
    )?;
    let captions: Vec<TokenizedCaption> = items
        .iter()
        .map(|i| tokenize(&i.caption, &model.vocab))
        .collect::<Result<_>>()?;
    let videos: Vec<&[Frame]> = items.iter().map(|i| i.frames.as_slice()).collect();
    let pairs: Vec<(usize, usize)> = (0..items.len()).map(|i| (i, i)).collect();
    let labels: Vec<f64> = items.iter().map(|i| i.label).collect();
    let mut g = Graph::new();
    let mut cache = NodeCache::new();
    let ps = model.score_pairs_node(&mut g, &mut cache, &captions, &videos, &pairs)?;
    let final_rows: Vec<usize> = (0..pairs.len()).map(|p| ps.final_row(p)).collect();
    let finals = g.select_rows(ps.prefix, final_rows);
    let loss = bce_with_logits_node(&mut g, finals, &labels);
    let loss_value = g.scalar_value(loss) as f64;
    let grads = g.backward(loss);
    opt.step(params, &grads);
    Ok(loss_value)
}

/// Gradient-based training of the critic. One checkpoint per epoch with train
/// loss and validation metrics; returns the per-epoch records and the model
/// state at the epoch minimizing validation v2t cross-entropy.
pub fn train(
    critic_cfg: &CriticConfig,
    cfg: &TrainConfig,
    train_reader: &DatasetReader,
    val_reader: &DatasetReader,
    out_dir: Option<&Path>,
    dataset_hash: &str,
    config_hash: &str,
) -> Result<(CriticModel<f32>, Vec<EpochCheckpoint>)> {
    cfg.validate()?;
    critic_cfg.validate()?;
    let run = || train_inner(critic_cfg, cfg, train_reader, val_reader, out_dir, dataset_hash, config_hash);
    if cfg.num_threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.num_threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

fn train_inner(
    critic_cfg: &CriticConfig,
    cfg: &TrainConfig,
    train_reader: &DatasetReader,
    val_reader: &DatasetReader,
    out_dir: Option<&Path>,
    dataset_hash: &str,
    config_hash: &str,
) -> Result<(CriticModel<f32>, Vec<EpochCheckpoint>)> {
    let pool = EpisodePool::new(train_reader);
    let vocab = Vocab::build(pool.by_caption.keys().map(|s| s.as_str()));
    let mut model = CriticModel::<f32>::init(critic_cfg.clone(), vocab, cfg.seed)?;
    let mut opt = AdamW::new(&model.params, cfg.learning_rate, cfg.weight_decay);

    let steps_per_epoch = (pool.success_idx.len() / cfg.batch_successes).max(1);
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some(std::io::BufWriter::new(
                fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
            ))
        }
        None => None,
    };

    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, crate::nn::ParamStore<f32>)> = None;
    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut epoch_objective = cfg.objective;
        if epoch < cfg.alpha_warmup_epochs {
            epoch_objective.alpha *= epoch as f64 / cfg.alpha_warmup_epochs as f64;
        }
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            let step_seed = child_seed(cfg.seed, "train-step", (epoch * steps_per_epoch + step) as u64);
            let mut params = model.params.clone();
            let loss = match cfg.objective.objective {
                ObjectiveKind::BinaryClassification => {
                    binary_step(&model, &pool, cfg, &mut opt, &mut params, step_seed)?
                }
                _ => contrastive_step(
                    &model,
                    &pool,
                    cfg,
                    &epoch_objective,
                    &mut opt,
                    &mut params,
                    step_seed,
                )?,
            };
            model.params = params;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: global_step,
                    msg: format!("loss = {loss}"),
                });
            }
            epoch_loss += loss;
            if let Some(log) = log.as_mut() {
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({"step": global_step, "loss": loss, "lr": cfg.learning_rate})
                )
                .map_err(|e| Error::io(out_dir.unwrap(), e))?;
            }
            global_step += 1;
        }
        let train_loss = epoch_loss / steps_per_epoch as f64;
        let metrics = validate(
            &model,
            val_reader,
            &cfg.eval_sampling,
            cfg.val_groups,
            child_seed(cfg.seed, "validate", epoch as u64),
        )?;
        let dir = if let Some(out) = out_dir {
            let ckpt_dir = out.join(format!("ckpt_{epoch:04}"));
            let meta = CheckpointMeta {
                config: model.cfg.clone(),
                vocab: model.vocab.clone(),
                epoch,
                train_loss,
                v2t_xent: metrics.v2t_xent,
                ranking_accuracy: metrics.ranking_accuracy,
                monotonicity_rate: metrics.monotonicity_rate,
                dataset_hash: dataset_hash.to_string(),
                config_hash: config_hash.to_string(),
                global_seed: cfg.seed,
            };
            save_checkpoint(&model, &meta, &ckpt_dir)?;
            Some(ckpt_dir)
        } else {
            None
        };
        if best.as_ref().map(|(v, _)| metrics.v2t_xent < *v).unwrap_or(true) {
            best = Some((metrics.v2t_xent, model.params.clone()));
        }
        checkpoints.push(EpochCheckpoint {
            epoch,
            train_loss,
            metrics,
            dir,
        });
    }
    if let Some(log) = log.as_mut() {
        log.flush().map_err(|e| Error::io(out_dir.unwrap(), e))?;
    }
    let (_, best_params) = best.expect("at least one epoch");
    let best_model = CriticModel::from_store(model.cfg.clone(), model.vocab.clone(), best_params)?;
    Ok((best_model, checkpoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{write_dataset, SplitTag};
    use crate::taskworld::{corrupt_policy, enumerate_tasks, generate_episode, ExpertPolicy};

    fn tiny_dataset(dir: &Path, n_tasks: usize, n_success: usize, n_fail: usize) -> DatasetReader {
        let tasks = enumerate_tasks();
        let mut eps = Vec::new();
        for task in tasks.iter().take(n_tasks) {
            let mut got = 0;
            let mut seed = 0u64;
            while got < n_success {
                let ep = generate_episode(task, &mut ExpertPolicy, seed).unwrap();
                seed += 1;
                if ep.success {
                    eps.push(ep);
                    got += 1;
                }
            }
            let mut got = 0;
            let mut seed = 1000u64;
            while got < n_fail {
                let mut pol = corrupt_policy(ExpertPolicy, 1.0, seed * 31 + 7).unwrap();
                let ep = generate_episode(task, &mut pol, seed).unwrap();
                seed += 1;
                if !ep.success {
                    eps.push(ep);
                    got += 1;
                }
            }
        }
        write_dataset(&eps, dir, SplitTag::Train).unwrap();
        DatasetReader::open(dir).unwrap()
    }

    fn tiny_critic_cfg() -> CriticConfig {
        CriticConfig {
            embed_dim: 16,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 1,
            temporal_heads: 2,
            frame_patch: 16,
            ..Default::default()
        }
    }

    #[test]
    fn batch_respects_caption_distinctness_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let reader = tiny_dataset(dir.path(), 4, 3, 2);
        let pool = EpisodePool::new(&reader);
        let cfg = TrainConfig::default();
        let b = build_batch(&pool, 3, 2, &cfg.sampling, &AugmentConfig::disabled(), 5).unwrap();
        assert_eq!(b.successes.len(), 3);
        assert_eq!(b.failures.len(), 2);
        let mut caps: Vec<_> = b.successes.iter().map(|i| i.caption.clone().unwrap()).collect();
        caps.sort();
        caps.dedup();
        assert_eq!(caps.len(), 3, "captions must be distinct within a batch");
        // zero failures allowed
        let b0 = build_batch(&pool, 3, 0, &cfg.sampling, &AugmentConfig::disabled(), 5).unwrap();
        assert!(b0.failures.is_empty());
        // determinism
        let b1 = build_batch(&pool, 3, 2, &cfg.sampling, &AugmentConfig::disabled(), 5).unwrap();
        let idx0: Vec<_> = b.successes.iter().map(|i| i.episode_index).collect();
        let idx1: Vec<_> = b1.successes.iter().map(|i| i.episode_index).collect();
        assert_eq!(idx0, idx1);
        // insufficient data
        assert!(build_batch(&pool, 50, 0, &cfg.sampling, &AugmentConfig::disabled(), 5).is_err());
    }

    #[test]
    fn one_epoch_smoke_emits_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let reader = tiny_dataset(dir.path(), 3, 3, 1);
        let val_dir = tempfile::tempdir().unwrap();
        let val_reader = tiny_dataset(val_dir.path(), 3, 2, 1);
        let cfg = TrainConfig {
            batch_successes: 2,
            batch_failures: 1,
            epochs: 1,
            val_groups: 2,
            ..Default::default()
        };
        let out = tempfile::tempdir().unwrap();
        let (_, ckpts) = train(
            &tiny_critic_cfg(),
            &cfg,
            &reader,
            &val_reader,
            Some(out.path()),
            "hash",
            "cfg",
        )
        .unwrap();
        assert_eq!(ckpts.len(), 1);
        assert!(ckpts[0].dir.as_ref().unwrap().join("weights.bin").exists());
        assert!(out.path().join("train_log.jsonl").exists());
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let reader = tiny_dataset(dir.path(), 3, 3, 1);
        let val_dir = tempfile::tempdir().unwrap();
        let val_reader = tiny_dataset(val_dir.path(), 3, 2, 1);
        let cfg = TrainConfig {
            batch_successes: 2,
            batch_failures: 1,
            epochs: 1,
            val_groups: 2,
            num_threads: 1,
            ..Default::default()
        };
        let (_, a) = train(&tiny_critic_cfg(), &cfg, &reader, &val_reader, None, "h", "c").unwrap();
        let (_, b) = train(&tiny_critic_cfg(), &cfg, &reader, &val_reader, None, "h", "c").unwrap();
        assert!((a[0].train_loss - b[0].train_loss).abs() < 1e-6);
        assert_eq!(a[0].train_loss, b[0].train_loss, "bit-stable in single-threaded mode");
    }

    #[test]
    fn select_checkpoint_rules() {
        let mk = |epoch, v2t| EpochCheckpoint {
            epoch,
            train_loss: 0.0,
            metrics: ValMetrics {
                v2t_xent: v2t,
                ranking_accuracy: 0.0,
                monotonicity_rate: 0.0,
            },
            dir: None,
        };
        let single = vec![mk(0, 0.5)];
        assert_eq!(select_checkpoint(&single).unwrap().epoch, 0);
        let series = vec![mk(0, 1.2), mk(1, 0.8), mk(2, 0.9)];
        assert_eq!(select_checkpoint(&series).unwrap().epoch, 1);
        let tie = vec![mk(0, 0.8), mk(1, 0.8)];
        assert_eq!(select_checkpoint(&tie).unwrap().epoch, 0);
        assert!(select_checkpoint(&[]).is_err());
    }

    #[test]
    fn binary_objective_trains() {
        let dir = tempfile::tempdir().unwrap();
        let reader = tiny_dataset(dir.path(), 3, 3, 2);
        let val_dir = tempfile::tempdir().unwrap();
        let val_reader = tiny_dataset(val_dir.path(), 3, 2, 1);
        let cfg = TrainConfig {
            batch_successes: 2,
            batch_failures: 1,
            epochs: 1,
            val_groups: 2,
            objective: ObjectiveConfig {
                alpha: 0.0,
                objective: ObjectiveKind::BinaryClassification,
            },
            ..Default::default()
        };
        let (_, ckpts) = train(&tiny_critic_cfg(), &cfg, &reader, &val_reader, None, "h", "c").unwrap();
        assert!(ckpts[0].train_loss.is_finite());
    }
}
