//! Graph-building helpers for the model components: linear layers,
//! layer norm, and pre-norm transformer stacks over ragged sequences.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{normal_init, ones, zeros, ParamId, ParamStore};
use super::real::Real;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Per-graph cache so a parameter is inserted as a leaf node at most once.
#[derive(Default)]
pub struct NodeCache {
    map: HashMap<ParamId, NodeId>,
}

impl NodeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node<R: Real>(
        &mut self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        id: ParamId,
    ) -> NodeId {
        *self.map.entry(id).or_insert_with(|| g.param(store, id))
    }
}

#[derive(Clone, Copy)]
pub struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

pub fn init_linear<R: Real>(
    st: &mut ParamStore<R>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut ChaCha8Rng,
) {
    st.add(format!("{name}.w"), normal_init(rng, d_in, d_out, INIT_STD));
    st.add(format!("{name}.b"), zeros(1, d_out));
}

pub fn resolve_linear<R: Real>(st: &ParamStore<R>, name: &str) -> LinearP {
    LinearP {
        w: st.id(&format!("{name}.w")),
        b: st.id(&format!("{name}.b")),
    }
}

pub fn linear<R: Real>(
    g: &mut Graph<R>,
    cache: &mut NodeCache,
    st: &ParamStore<R>,
    x: NodeId,
    p: &LinearP,
) -> NodeId {
    let w = cache.node(g, st, p.w);
    let b = cache.node(g, st, p.b);
    let mm = g.matmul(x, w, false, false);
    g.add_row(mm, b)
}

#[derive(Clone, Copy)]
pub struct LayerNormP {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub fn init_layer_norm<R: Real>(st: &mut ParamStore<R>, name: &str, d: usize) {
    st.add(format!("{name}.g"), ones(1, d));
    st.add(format!("{name}.b"), zeros(1, d));
}

pub fn resolve_layer_norm<R: Real>(st: &ParamStore<R>, name: &str) -> LayerNormP {
    LayerNormP {
        gamma: st.id(&format!("{name}.g")),
        beta: st.id(&format!("{name}.b")),
    }
}

pub fn layer_norm<R: Real>(
    g: &mut Graph<R>,
    cache: &mut NodeCache,
    st: &ParamStore<R>,
    x: NodeId,
    p: &LayerNormP,
) -> NodeId {
    let gamma = cache.node(g, st, p.gamma);
    let beta = cache.node(g, st, p.beta);
    g.layer_norm(x, gamma, beta, LN_EPS)
}

#[derive(Clone)]
pub struct BlockP {
    pub ln1: LayerNormP,
    pub wq: LinearP,
    pub wk: LinearP,
    pub wv: LinearP,
    pub wo: LinearP,
    pub ln2: LayerNormP,
    pub mlp1: LinearP,
    pub mlp2: LinearP,
}

#[derive(Clone)]
pub struct StackP {
    pub blocks: Vec<BlockP>,
    pub ln_final: LayerNormP,
}

pub fn init_stack<R: Real>(
    st: &mut ParamStore<R>,
    prefix: &str,
    layers: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) {
    for l in 0..layers {
        let p = format!("{prefix}.l{l}");
        init_layer_norm(st, &format!("{p}.ln1"), d);
        init_linear(st, &format!("{p}.wq"), d, d, rng);
        init_linear(st, &format!("{p}.wk"), d, d, rng);
        init_linear(st, &format!("{p}.wv"), d, d, rng);
        init_linear(st, &format!("{p}.wo"), d, d, rng);
        init_layer_norm(st, &format!("{p}.ln2"), d);
        init_linear(st, &format!("{p}.mlp1"), d, 4 * d, rng);
        init_linear(st, &format!("{p}.mlp2"), 4 * d, d, rng);
    }
    init_layer_norm(st, &format!("{prefix}.ln_f"), d);
}

pub fn resolve_stack<R: Real>(st: &ParamStore<R>, prefix: &str, layers: usize) -> StackP {
    let blocks = (0..layers)
        .map(|l| {
            let p = format!("{prefix}.l{l}");
            BlockP {
                ln1: resolve_layer_norm(st, &format!("{p}.ln1")),
                wq: resolve_linear(st, &format!("{p}.wq")),
                wk: resolve_linear(st, &format!("{p}.wk")),
                wv: resolve_linear(st, &format!("{p}.wv")),
                wo: resolve_linear(st, &format!("{p}.wo")),
                ln2: resolve_layer_norm(st, &format!("{p}.ln2")),
                mlp1: resolve_linear(st, &format!("{p}.mlp1")),
                mlp2: resolve_linear(st, &format!("{p}.mlp2")),
            }
        })
        .collect();
    StackP {
        blocks,
        ln_final: resolve_layer_norm(st, &format!("{prefix}.ln_f")),
    }
}

/// Pre-norm transformer over ragged sequences; ends with a final layer norm.
pub fn transformer_stack<R: Real>(
    g: &mut Graph<R>,
    cache: &mut NodeCache,
    st: &ParamStore<R>,
    x: NodeId,
    stack: &StackP,
    heads: usize,
    seq_lens: &[usize],
    causal: bool,
) -> NodeId {
    let mut h = x;
    for b in &stack.blocks {
        let n1 = layer_norm(g, cache, st, h, &b.ln1);
        let q = linear(g, cache, st, n1, &b.wq);
        let k = linear(g, cache, st, n1, &b.wk);
        let v = linear(g, cache, st, n1, &b.wv);
        let att = g.attention(q, k, v, heads, seq_lens.to_vec(), causal);
        let proj = linear(g, cache, st, att, &b.wo);
        h = g.add(h, proj);
        let n2 = layer_norm(g, cache, st, h, &b.ln2);
        let mid = linear(g, cache, st, n2, &b.mlp1);
        let act = g.gelu(mid);
        let out = linear(g, cache, st, act, &b.mlp2);
        h = g.add(h, out);
    }
    layer_norm(g, cache, st, h, &stack.ln_final)
}
