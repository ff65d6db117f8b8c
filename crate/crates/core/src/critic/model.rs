use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::aggregator::{make_aggregator, PairScores, TemporalAggregator};
use super::config::CriticConfig;
use super::vocab::{tokenize, TokenizedCaption, Vocab, CLS_ID};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{
    init_linear, init_stack, linear, resolve_linear, resolve_stack, transformer_stack, LinearP,
    NodeCache, StackP,
};
use crate::nn::params::{normal_init, ParamId, ParamStore};
use crate::nn::real::Real;
use crate::seeds::{child_seed, rng_from};
use crate::taskworld::Frame;
use crate::{Error, Result};

/// Per-prefix similarity scores for one (video, caption) pair. Videos are laid
/// out ragged, so every position is valid; the mask is kept for the contract.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixScores {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PrefixScores {
    pub fn final_score(&self) -> f64 {
        *self.scores.last().expect("non-empty prefix scores")
    }
}

struct ModelParts {
    text_embed: ParamId,
    text_pos: ParamId,
    text_stack: StackP,
    patch_embed: LinearP,
    frame_pos: ParamId,
    frame_stack: StackP,
}

/// The reward model: text encoder, per-frame visual encoder, and a temporal
/// aggregation strategy mapping (video prefix, caption) to a scalar score.
pub struct CriticModel<R: Real> {
    pub cfg: CriticConfig,
    pub vocab: Vocab,
    pub params: ParamStore<R>,
    parts: ModelParts,
    aggregator: Box<dyn TemporalAggregator<R>>,
}

impl<R: Real> CriticModel<R> {
    /// Fresh model with seeded initialization.
    pub fn init(cfg: CriticConfig, vocab: Vocab, seed: u64) -> Result<CriticModel<R>> {
        cfg.validate()?;
        let mut st = ParamStore::new();
        let mut rng = rng_from(child_seed(seed, "critic-init", 0));
        let d = cfg.embed_dim;
        st.add("text.embed", normal_init(&mut rng, vocab.size(), d, 0.02));
        st.add("text.pos", normal_init(&mut rng, cfg.max_text_len, d, 0.02));
        init_stack(&mut st, "text", cfg.text_layers, d, &mut rng);
        init_linear(&mut st, "frame.patch_embed", cfg.patch_dim(), d, &mut rng);
        st.add(
            "frame.pos",
            normal_init(&mut rng, cfg.patches_per_frame(), d, 0.02),
        );
        init_stack(&mut st, "frame", cfg.frame_layers, d, &mut rng);
        let mut aggregator = make_aggregator::<R>(&cfg.aggregator)?;
        aggregator.init_params(&cfg, &mut st, &mut rng);
        aggregator.resolve(&cfg, &st);
        let parts = Self::resolve_parts(&cfg, &st);
        Ok(CriticModel {
            cfg,
            vocab,
            params: st,
            parts,
            aggregator,
        })
    }

    /// Rebuild a model around an existing parameter store (checkpoint load).
    pub fn from_store(cfg: CriticConfig, vocab: Vocab, params: ParamStore<R>) -> Result<CriticModel<R>> {
        cfg.validate()?;
        let mut aggregator = make_aggregator::<R>(&cfg.aggregator)?;
        aggregator.resolve(&cfg, &params);
        let parts = Self::resolve_parts(&cfg, &params);
        Ok(CriticModel {
            cfg,
            vocab,
            params,
            parts,
            aggregator,
        })
    }

    fn resolve_parts(cfg: &CriticConfig, st: &ParamStore<R>) -> ModelParts {
        ModelParts {
            text_embed: st.id("text.embed"),
            text_pos: st.id("text.pos"),
            text_stack: resolve_stack(st, "text", cfg.text_layers),
            patch_embed: resolve_linear(st, "frame.patch_embed"),
            frame_pos: st.id("frame.pos"),
            frame_stack: resolve_stack(st, "frame", cfg.frame_layers),
        }
    }

    pub fn aggregator_name(&self) -> &'static str {
        self.aggregator.name()
    }

    // ---- graph builders ----

    /// Encode tokenized captions to `[N, d]` (first-token readout).
    pub(crate) fn encode_text_node(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        captions: &[TokenizedCaption],
    ) -> Result<NodeId> {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut seq_lens = Vec::with_capacity(captions.len());
        let mut readout_rows = Vec::with_capacity(captions.len());
        let mut cursor = 0usize;
        for c in captions {
            let len = c.token_ids.len() + 1;
            if len > self.cfg.max_text_len {
                return Err(Error::InvalidArgument(format!(
                    "caption of {} tokens exceeds max_text_len {}",
                    c.token_ids.len(),
                    self.cfg.max_text_len
                )));
            }
            ids.push(CLS_ID);
            pos.push(0);
            for (i, &t) in c.token_ids.iter().enumerate() {
                ids.push(t);
                pos.push(i + 1);
            }
            seq_lens.push(len);
            readout_rows.push(cursor);
            cursor += len;
        }
        let embed = cache.node(g, &self.params, self.parts.text_embed);
        let pos_table = cache.node(g, &self.params, self.parts.text_pos);
        let tok_rows = g.select_rows(embed, ids);
        let pos_rows = g.select_rows(pos_table, pos);
        let x = g.add(tok_rows, pos_rows);
        let h = transformer_stack(
            g,
            cache,
            &self.params,
            x,
            &self.parts.text_stack,
            self.cfg.temporal_heads,
            &seq_lens,
            false,
        );
        Ok(g.select_rows(h, readout_rows))
    }

    /// Encode frames independently to `[F, d]` (patch transformer, mean-pooled
    /// over patches). Frame order cannot influence individual rows.
    pub(crate) fn encode_frames_node(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        frames: &[&Frame],
    ) -> NodeId {
        let p = self.cfg.frame_patch;
        let side = self.cfg.image_size / p;
        let n_patches = self.cfg.patches_per_frame();
        let patch_dim = self.cfg.patch_dim();
        let mut patches = Array2::<R>::zeros((frames.len() * n_patches, patch_dim));
        for (fi, f) in frames.iter().enumerate() {
            debug_assert_eq!(f.dim(), (self.cfg.image_size, self.cfg.image_size, 3));
            for pr in 0..side {
                for pc in 0..side {
                    let row = fi * n_patches + pr * side + pc;
                    let mut col = 0;
                    for r in 0..p {
                        for c in 0..p {
                            for ch in 0..3 {
                                patches[[row, col]] =
                                    R::from_f64(f[[pr * p + r, pc * p + c, ch]] as f64);
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        let x = g.constant(patches);
        let emb = linear(g, cache, &self.params, x, &self.parts.patch_embed);
        let pos_table = cache.node(g, &self.params, self.parts.frame_pos);
        let pos_idx: Vec<usize> = (0..frames.len()).flat_map(|_| 0..n_patches).collect();
        let pos_rows = g.select_rows(pos_table, pos_idx);
        let xp = g.add(emb, pos_rows);
        let seq_lens = vec![n_patches; frames.len()];
        let h = transformer_stack(
            g,
            cache,
            &self.params,
            xp,
            &self.parts.frame_stack,
            self.cfg.temporal_heads,
            &seq_lens,
            false,
        );
        g.mean_pool_rows(h, n_patches)
    }

    /// Score every (caption, video) pair; shared entry point for training and
    /// evaluation.
    pub(crate) fn score_pairs_node(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        captions: &[TokenizedCaption],
        videos: &[&[Frame]],
        pairs: &[(usize, usize)],
    ) -> Result<PairScores> {
        for v in videos {
            if v.is_empty() {
                return Err(Error::InvalidArgument("cannot score an empty video".into()));
            }
            if v.len() > self.cfg.max_frames {
                return Err(Error::InvalidArgument(format!(
                    "video of {} frames exceeds max_frames {}",
                    v.len(),
                    self.cfg.max_frames
                )));
            }
        }
        let text = self.encode_text_node(g, cache, captions)?;
        let all_frames: Vec<&Frame> = videos.iter().flat_map(|v| v.iter()).collect();
        let frames = self.encode_frames_node(g, cache, &all_frames);
        let video_lens: Vec<usize> = videos.iter().map(|v| v.len()).collect();
        Ok(self.aggregator.score_pairs(
            g,
            cache,
            &self.params,
            &self.cfg,
            text,
            frames,
            &video_lens,
            pairs,
        ))
    }

    // ---- evaluation API ----

    /// One new-graph forward returning per-prefix scores in one causal pass.
    pub fn score_prefixes(&self, frames: &[Frame], caption: &str) -> Result<PrefixScores> {
        let toks = tokenize(caption, &self.vocab)?;
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let ps = self.score_pairs_node(&mut g, &mut cache, &[toks], &[frames], &[(0, 0)])?;
        let v = g.value(ps.prefix);
        let scores: Vec<f64> = (0..frames.len()).map(|t| v[[t, 0]].as_f64()).collect();
        Ok(PrefixScores {
            mask: vec![true; scores.len()],
            scores,
        })
    }

    /// Reference mode: recompute each prefix independently. Used to verify the
    /// causal single-pass equivalence.
    pub fn score_prefixes_reference(&self, frames: &[Frame], caption: &str) -> Result<PrefixScores> {
        let mut scores = Vec::with_capacity(frames.len());
        for t in 0..frames.len() {
            let ps = self.score_prefixes(&frames[..=t], caption)?;
            scores.push(ps.final_score());
        }
        Ok(PrefixScores {
            mask: vec![true; scores.len()],
            scores,
        })
    }

    /// Full-video score: the last prefix score.
    pub fn score(&self, frames: &[Frame], caption: &str) -> Result<f64> {
        Ok(self.score_prefixes(frames, caption)?.final_score())
    }

    /// Batched full-video scores for (video, caption) items.
    pub fn score_batch(&self, items: &[(&[Frame], &str)]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(CHUNK) {
            let captions: Vec<TokenizedCaption> = chunk
                .iter()
                .map(|(_, c)| tokenize(c, &self.vocab))
                .collect::<Result<_>>()?;
            let videos: Vec<&[Frame]> = chunk.iter().map(|(v, _)| *v).collect();
            let pairs: Vec<(usize, usize)> = (0..chunk.len()).map(|i| (i, i)).collect();
            let mut g = Graph::new();
            let mut cache = NodeCache::new();
            let ps = self.score_pairs_node(&mut g, &mut cache, &captions, &videos, &pairs)?;
            let v = g.value(ps.prefix);
            for p in 0..chunk.len() {
                out.push(v[[ps.final_row(p), 0]].as_f64());
            }
        }
        Ok(out)
    }

    /// Spec-level text encoding: one caption to a d-vector.
    pub fn encode_text(&self, caption: &str) -> Result<Vec<f64>> {
        let toks = tokenize(caption, &self.vocab)?;
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let node = self.encode_text_node(&mut g, &mut cache, &[toks])?;
        let v = g.value(node);
        Ok((0..self.cfg.embed_dim).map(|j| v[[0, j]].as_f64()).collect())
    }

    /// Spec-level frame encoding: K frames to a K x d matrix.
    pub fn encode_frames(&self, frames: &[Frame]) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let refs: Vec<&Frame> = frames.iter().collect();
        let node = self.encode_frames_node(&mut g, &mut cache, &refs);
        let v = g.value(node);
        Ok(v.mapv(|x| x.as_f64()))
    }
}

/// Incremental scorer for a growing episode: caption and per-frame embeddings
/// are computed once and reused, only the aggregator reruns per step. Scores
/// match [`CriticModel::score`] exactly (frame encodings are per-frame
/// independent).
pub struct CachedScorer<'m> {
    model: &'m CriticModel<f32>,
    text_emb: Array2<f32>,
    frame_embs: std::collections::HashMap<usize, Vec<f32>>,
}

impl<'m> CachedScorer<'m> {
    pub fn new(model: &'m CriticModel<f32>, caption: &str) -> Result<CachedScorer<'m>> {
        let toks = tokenize(caption, &model.vocab)?;
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let node = model.encode_text_node(&mut g, &mut cache, std::slice::from_ref(&toks))?;
        let text_emb = g.value(node).clone();
        Ok(CachedScorer {
            model,
            text_emb,
            frame_embs: std::collections::HashMap::new(),
        })
    }

    /// Drop cached frame embeddings (new episode).
    pub fn reset(&mut self) {
        self.frame_embs.clear();
    }

    /// Score the prefix made of `frames[indices]`, encoding only frames not
    /// seen before (keyed by original index).
    pub fn score_prefix(&mut self, frames: &[Frame], indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty prefix".into()));
        }
        if indices.len() > self.model.cfg.max_frames {
            return Err(Error::InvalidArgument(format!(
                "{} sampled frames exceed max_frames {}",
                indices.len(),
                self.model.cfg.max_frames
            )));
        }
        let missing: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|i| !self.frame_embs.contains_key(i))
            .collect();
        if !missing.is_empty() {
            let mut g = Graph::new();
            let mut cache = NodeCache::new();
            let refs: Vec<&Frame> = missing.iter().map(|&i| &frames[i]).collect();
            let node = self.model.encode_frames_node(&mut g, &mut cache, &refs);
            let v = g.value(node);
            for (k, &i) in missing.iter().enumerate() {
                self.frame_embs.insert(i, v.row(k).to_vec());
            }
        }
        let d = self.model.cfg.embed_dim;
        let mut emb = Array2::<f32>::zeros((indices.len(), d));
        for (k, i) in indices.iter().enumerate() {
            emb.row_mut(k)
                .assign(&ndarray::ArrayView1::from(&self.frame_embs[i][..]));
        }
        let mut g = Graph::new();
        let mut cache = NodeCache::new();
        let text = g.constant(self.text_emb.clone());
        let fr = g.constant(emb);
        let ps = self.model.aggregator.score_pairs(
            &mut g,
            &mut cache,
            &self.model.params,
            &self.model.cfg,
            text,
            fr,
            &[indices.len()],
            &[(0, 0)],
        );
        Ok(g.value(ps.prefix)[[ps.final_row(0), 0]] as f64)
    }
}

// ---- checkpoint IO ----

/// Sidecar metadata stored with each checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CriticConfig,
    pub vocab: Vocab,
    pub epoch: usize,
    pub train_loss: f64,
    pub v2t_xent: f64,
    pub ranking_accuracy: f64,
    pub monotonicity_rate: f64,
    pub dataset_hash: String,
    pub config_hash: String,
    pub global_seed: u64,
}

const WEIGHTS_MAGIC: &[u8; 4] = b"VLCW";

pub fn save_weights<R: Real>(store: &ParamStore<R>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    out.write_all(WEIGHTS_MAGIC).map_err(|e| Error::io(path, e))?;
    out.write_all(&1u32.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    out.write_all(&(store.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    for (name, value) in store.iter() {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u16).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        out.write_all(name_bytes).map_err(|e| Error::io(path, e))?;
        let (r, c) = value.dim();
        out.write_all(&(r as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        out.write_all(&(c as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        for v in value.iter() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weights<R: Real>(path: &Path) -> Result<ParamStore<R>> {
    let mut file = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    file.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        file.read_exact(&mut u16buf).map_err(|e| Error::io(path, e))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?;
        file.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        file.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut data = vec![0u8; rows * cols * 4];
        file.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
        let values: Vec<R> = data
            .chunks(4)
            .map(|b| R::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        store.add(
            name,
            Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| Error::Checkpoint(format!("bad parameter shape: {e}")))?,
        );
    }
    Ok(store)
}

/// Write `weights.bin` + `meta.json` into `dir`.
pub fn save_checkpoint<R: Real>(model: &CriticModel<R>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_weights(&model.params, &dir.join("weights.bin"))?;
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(CriticModel<f32>, CheckpointMeta)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::Checkpoint(format!(
            "missing checkpoint metadata at {}",
            meta_path.display()
        )));
    }
    let mut meta: CheckpointMeta = serde_json::from_slice(
        &fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )?;
    meta.vocab.rebuild_index();
    let store = load_weights::<f32>(&dir.join("weights.bin"))?;
    let model = CriticModel::from_store(meta.config.clone(), meta.vocab.clone(), store)?;
    Ok((model, meta))
}
