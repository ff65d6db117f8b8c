//! Temporal aggregation strategies.
//!
//! Every strategy implements [`TemporalAggregator`] and is selected by name at
//! runtime via [`make_aggregator`]. All three consume per-frame embeddings and
//! a caption embedding and emit one similarity score per video prefix:
//!
//! - `tight`: a causally masked transformer over `[caption token, frames...]`
//!   with a linear head on each frame position; the caption conditions the
//!   aggregation itself.
//! - `sequence_cosine`: a causal transformer over frames only; the prefix
//!   embedding at t is compared to the caption embedding by scaled cosine.
//! - `mean_pool`: running mean of frame embeddings, scaled cosine against the
//!   caption. Order-invariant by construction; kept as a deliberately
//!   defective baseline.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::config::CriticConfig;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{
    init_linear, init_stack, linear, resolve_linear, resolve_stack, transformer_stack, LinearP,
    NodeCache, StackP,
};
use crate::nn::params::{normal_init, ParamId, ParamStore};
use crate::nn::real::Real;
use crate::{Error, Result};

/// Prefix scores for a list of (caption, video) pairs, concatenated in pair
/// order: rows `pair_offsets[p] .. pair_offsets[p] + pair_lens[p]` of `prefix`
/// hold pair p's per-prefix scores.
pub struct PairScores {
    pub prefix: NodeId,
    pub pair_offsets: Vec<usize>,
    pub pair_lens: Vec<usize>,
}

impl PairScores {
    /// Row index of pair p's full-video score.
    pub fn final_row(&self, p: usize) -> usize {
        self.pair_offsets[p] + self.pair_lens[p] - 1
    }
}

pub trait TemporalAggregator<R: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Insert this strategy's parameters (called once at model init).
    fn init_params(&self, cfg: &CriticConfig, st: &mut ParamStore<R>, rng: &mut ChaCha8Rng);
    /// Resolve parameter ids after init or checkpoint load.
    fn resolve(&mut self, cfg: &CriticConfig, st: &ParamStore<R>);
    /// Score every (text row, video) pair over ragged frame embeddings.
    fn score_pairs(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        st: &ParamStore<R>,
        cfg: &CriticConfig,
        text: NodeId,
        frames: NodeId,
        video_lens: &[usize],
        pairs: &[(usize, usize)],
    ) -> PairScores;
}

pub const AGGREGATOR_NAMES: [&str; 3] = ["tight", "sequence_cosine", "mean_pool"];

/// Runtime strategy selection by name.
pub fn make_aggregator<R: Real>(name: &str) -> Result<Box<dyn TemporalAggregator<R>>> {
    match name {
        "tight" => Ok(Box::new(Tight::default())),
        "sequence_cosine" => Ok(Box::new(SequenceCosine::default())),
        "mean_pool" => Ok(Box::new(MeanPool)),
        other => Err(Error::Config(format!(
            "unknown aggregator {other:?}; expected one of {AGGREGATOR_NAMES:?}"
        ))),
    }
}

fn offsets_of(lens: &[usize]) -> Vec<usize> {
    lens.iter()
        .scan(0usize, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect()
}

// ---- tight ----

#[derive(Default)]
pub struct Tight {
    resolved: Option<TightParams>,
}

struct TightParams {
    pos: ParamId,
    stack: StackP,
    head: LinearP,
}

impl<R: Real> TemporalAggregator<R> for Tight {
    fn name(&self) -> &'static str {
        "tight"
    }

    fn init_params(&self, cfg: &CriticConfig, st: &mut ParamStore<R>, rng: &mut ChaCha8Rng) {
        st.add("agg.pos", normal_init(rng, cfg.max_frames, cfg.embed_dim, 0.02));
        init_stack(st, "agg", cfg.temporal_layers, cfg.embed_dim, rng);
        init_linear(st, "agg.head", cfg.embed_dim, 1, rng);
    }

    fn resolve(&mut self, cfg: &CriticConfig, st: &ParamStore<R>) {
        self.resolved = Some(TightParams {
            pos: st.id("agg.pos"),
            stack: resolve_stack(st, "agg", cfg.temporal_layers),
            head: resolve_linear(st, "agg.head"),
        });
    }

    fn score_pairs(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        st: &ParamStore<R>,
        cfg: &CriticConfig,
        text: NodeId,
        frames: NodeId,
        video_lens: &[usize],
        pairs: &[(usize, usize)],
    ) -> PairScores {
        let p = self.resolved.as_ref().expect("aggregator not resolved");
        let n_text = g.value(text).dim().0;
        let video_offsets = offsets_of(video_lens);

        let all = g.concat_rows(&[text, frames]);
        let mut row_idx = Vec::new();
        let mut pos_idx = Vec::new();
        let mut seq_lens = Vec::with_capacity(pairs.len());
        let mut frame_row_idx = Vec::new();
        let mut pair_offsets = Vec::with_capacity(pairs.len());
        let mut pair_lens = Vec::with_capacity(pairs.len());
        let mut cursor = 0usize;
        let mut selected = 0usize;
        for &(ti, vj) in pairs {
            let t_len = video_lens[vj];
            row_idx.push(ti);
            pos_idx.push(0); // text token carries no temporal position
            for t in 0..t_len {
                row_idx.push(n_text + video_offsets[vj] + t);
                pos_idx.push(1 + t);
            }
            seq_lens.push(t_len + 1);
            for t in 0..t_len {
                frame_row_idx.push(cursor + 1 + t);
            }
            pair_offsets.push(selected);
            pair_lens.push(t_len);
            selected += t_len;
            cursor += t_len + 1;
        }

        let seq = g.select_rows(all, row_idx);
        let zero_row = g.constant(Array2::zeros((1, cfg.embed_dim)));
        let pos_node = cache.node(g, st, p.pos);
        let pos_ext = g.concat_rows(&[zero_row, pos_node]);
        let pos_rows = g.select_rows(pos_ext, pos_idx);
        let x = g.add(seq, pos_rows);
        let h = transformer_stack(g, cache, st, x, &p.stack, cfg.temporal_heads, &seq_lens, true);
        let scores = linear(g, cache, st, h, &p.head);
        let prefix = g.select_rows(scores, frame_row_idx);
        PairScores {
            prefix,
            pair_offsets,
            pair_lens,
        }
    }
}

// ---- shared cosine machinery ----

fn row_normalize<R: Real>(g: &mut Graph<R>, x: NodeId) -> NodeId {
    let sq = g.square(x);
    let ss = g.sum_rows(sq);
    let ss_eps = g.add_scalar(ss, R::from_f64(1e-12));
    let norm = g.sqrt(ss_eps);
    g.div_col(x, norm)
}

/// Cosine of every (prefix row, text row) pair needed, via one matmul and a
/// gather on the flattened score grid.
fn cosine_pair_scores<R: Real>(
    g: &mut Graph<R>,
    prefix_embs: NodeId,
    text: NodeId,
    video_lens: &[usize],
    pairs: &[(usize, usize)],
    logit_scale: f64,
) -> PairScores {
    let n_text = g.value(text).dim().0;
    let total_rows = g.value(prefix_embs).dim().0;
    let video_offsets = offsets_of(video_lens);
    let nh = row_normalize(g, prefix_embs);
    let nt = row_normalize(g, text);
    let m = g.matmul(nh, nt, false, true);
    let scaled = g.scale(m, R::from_f64(logit_scale));
    let flat = g.reshape(scaled, total_rows * n_text, 1);
    let mut idx = Vec::new();
    let mut pair_offsets = Vec::with_capacity(pairs.len());
    let mut pair_lens = Vec::with_capacity(pairs.len());
    for &(ti, vj) in pairs {
        pair_offsets.push(idx.len());
        pair_lens.push(video_lens[vj]);
        for t in 0..video_lens[vj] {
            idx.push((video_offsets[vj] + t) * n_text + ti);
        }
    }
    let prefix = g.select_rows(flat, idx);
    PairScores {
        prefix,
        pair_offsets,
        pair_lens,
    }
}

// ---- sequence transformer + cosine ----

#[derive(Default)]
pub struct SequenceCosine {
    resolved: Option<SeqParams>,
}

struct SeqParams {
    pos: ParamId,
    stack: StackP,
}

impl<R: Real> TemporalAggregator<R> for SequenceCosine {
    fn name(&self) -> &'static str {
        "sequence_cosine"
    }

    fn init_params(&self, cfg: &CriticConfig, st: &mut ParamStore<R>, rng: &mut ChaCha8Rng) {
        st.add("agg.pos", normal_init(rng, cfg.max_frames, cfg.embed_dim, 0.02));
        init_stack(st, "agg", cfg.temporal_layers, cfg.embed_dim, rng);
    }

    fn resolve(&mut self, cfg: &CriticConfig, st: &ParamStore<R>) {
        self.resolved = Some(SeqParams {
            pos: st.id("agg.pos"),
            stack: resolve_stack(st, "agg", cfg.temporal_layers),
        });
    }

    fn score_pairs(
        &self,
        g: &mut Graph<R>,
        cache: &mut NodeCache,
        st: &ParamStore<R>,
        cfg: &CriticConfig,
        text: NodeId,
        frames: NodeId,
        video_lens: &[usize],
        pairs: &[(usize, usize)],
    ) -> PairScores {
        let p = self.resolved.as_ref().expect("aggregator not resolved");
        let pos_node = cache.node(g, st, p.pos);
        let pos_idx: Vec<usize> = video_lens.iter().flat_map(|&l| 0..l).collect();
        let pos_rows = g.select_rows(pos_node, pos_idx);
        let x = g.add(frames, pos_rows);
        // Causal pass: the row at position t is the embedding of prefix 0..=t.
        let h = transformer_stack(
            g,
            cache,
            st,
            x,
            &p.stack,
            cfg.temporal_heads,
            video_lens,
            true,
        );
        cosine_pair_scores(g, h, text, video_lens, pairs, cfg.logit_scale)
    }
}

// ---- mean pooling ----

pub struct MeanPool;

impl<R: Real> TemporalAggregator<R> for MeanPool {
    fn name(&self) -> &'static str {
        "mean_pool"
    }

    fn init_params(&self, _cfg: &CriticConfig, _st: &mut ParamStore<R>, _rng: &mut ChaCha8Rng) {}

    fn resolve(&mut self, _cfg: &CriticConfig, _st: &ParamStore<R>) {}

    fn score_pairs(
        &self,
        g: &mut Graph<R>,
        _cache: &mut NodeCache,
        _st: &ParamStore<R>,
        cfg: &CriticConfig,
        text: NodeId,
        frames: NodeId,
        video_lens: &[usize],
        pairs: &[(usize, usize)],
    ) -> PairScores {
        let h = g.prefix_mean_rows(frames, video_lens.to_vec());
        cosine_pair_scores(g, h, text, video_lens, pairs, cfg.logit_scale)
    }
}
