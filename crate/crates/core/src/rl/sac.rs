//! Soft actor-critic networks: squashed-Gaussian actor, twin Q critics with
//! targets, automatic entropy-coefficient tuning. All networks live in one
//! parameter store with name prefixes; updates are filtered by prefix so the
//! actor step never touches critic weights and vice versa.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::nn::adam::AdamW;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{init_linear, linear, resolve_linear, LinearP, NodeCache};
use crate::nn::params::ParamStore;

pub const OBS_DIM: usize = 8;
pub const ACTION_DIM: usize = 2;
const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone)]
pub struct Mlp {
    layers: Vec<LinearP>,
}

pub fn init_mlp(st: &mut ParamStore<f32>, prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng) {
    for (l, w) in dims.windows(2).enumerate() {
        init_linear(st, &format!("{prefix}.l{l}"), w[0], w[1], rng);
    }
}

pub fn resolve_mlp(st: &ParamStore<f32>, prefix: &str, n_layers: usize) -> Mlp {
    Mlp {
        layers: (0..n_layers)
            .map(|l| resolve_linear(st, &format!("{prefix}.l{l}")))
            .collect(),
    }
}

/// ReLU between layers, linear output.
pub fn mlp_forward(
    g: &mut Graph<f32>,
    cache: &mut NodeCache,
    st: &ParamStore<f32>,
    x: NodeId,
    mlp: &Mlp,
) -> NodeId {
    let mut h = x;
    for (i, layer) in mlp.layers.iter().enumerate() {
        h = linear(g, cache, st, h, layer);
        if i + 1 < mlp.layers.len() {
            h = g.relu(h);
        }
    }
    h
}

pub struct ActorParts {
    pub trunk: Mlp,
    pub mean: LinearP,
    pub log_std: LinearP,
}

pub fn resolve_actor(st: &ParamStore<f32>, hidden_layers: usize) -> ActorParts {
    ActorParts {
        trunk: resolve_mlp(st, "actor.trunk", hidden_layers),
        mean: resolve_linear(st, "actor.mean"),
        log_std: resolve_linear(st, "actor.log_std"),
    }
}

pub struct SacNets {
    pub store: ParamStore<f32>,
    pub target: ParamStore<f32>,
    pub actor: ActorParts,
    pub q1: Mlp,
    pub q2: Mlp,
    pub hidden_layers: usize,
}

impl SacNets {
    pub fn init(hidden: &[usize], rng: &mut ChaCha8Rng) -> SacNets {
        let mut st = ParamStore::new();
        let mut trunk_dims = vec![OBS_DIM];
        trunk_dims.extend_from_slice(hidden);
        init_mlp(&mut st, "actor.trunk", &trunk_dims, rng);
        let last = *trunk_dims.last().unwrap();
        init_linear(&mut st, "actor.mean", last, ACTION_DIM, rng);
        init_linear(&mut st, "actor.log_std", last, ACTION_DIM, rng);
        let mut q_dims = vec![OBS_DIM + ACTION_DIM];
        q_dims.extend_from_slice(hidden);
        q_dims.push(1);
        init_mlp(&mut st, "q1", &q_dims, rng);
        init_mlp(&mut st, "q2", &q_dims, rng);

        let mut target = ParamStore::new();
        for (name, v) in st.iter() {
            if name.starts_with("q1.") || name.starts_with("q2.") {
                target.add(name.to_string(), v.clone());
            }
        }
        let hidden_layers = hidden.len();
        let actor = ActorParts {
            trunk: resolve_mlp(&st, "actor.trunk", hidden_layers),
            mean: resolve_linear(&st, "actor.mean"),
            log_std: resolve_linear(&st, "actor.log_std"),
        };
        let q1 = resolve_mlp(&st, "q1", hidden_layers + 1);
        let q2 = resolve_mlp(&st, "q2", hidden_layers + 1);
        SacNets {
            store: st,
            target,
            actor,
            q1,
            q2,
            hidden_layers,
        }
    }

    /// Independent copy (used to freeze a policy for evaluation).
    pub fn snapshot(&self) -> SacNets {
        SacNets {
            store: self.store.clone(),
            target: self.target.clone(),
            actor: resolve_actor(&self.store, self.hidden_layers),
            q1: resolve_mlp(&self.store, "q1", self.hidden_layers + 1),
            q2: resolve_mlp(&self.store, "q2", self.hidden_layers + 1),
            hidden_layers: self.hidden_layers,
        }
    }

    /// Polyak-average the live critics into the target store.
    pub fn soft_update(&mut self, tau: f32) {
        for id in self.target.ids() {
            let name = self.target.name(id).to_string();
            let live = self.store.value(self.store.id(&name)).clone();
            let t = self.target.value_mut(id);
            t.zip_mut_with(&live, |te, &le| *te = (1.0 - tau) * *te + tau * le);
        }
    }
}

/// Squashed-Gaussian head: returns (action, log-prob, deterministic action).
pub fn actor_forward(
    g: &mut Graph<f32>,
    cache: &mut NodeCache,
    st: &ParamStore<f32>,
    actor: &ActorParts,
    obs: NodeId,
    noise: &Array2<f32>,
) -> (NodeId, NodeId, NodeId) {
    let h = mlp_forward(g, cache, st, obs, &actor.trunk);
    let h = g.relu(h);
    let mean = linear(g, cache, st, h, &actor.mean);
    let raw = linear(g, cache, st, h, &actor.log_std);
    let t = g.tanh(raw);
    let half_span = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    let scaled = g.scale(t, half_span as f32);
    let log_std = g.add_scalar(scaled, (LOG_STD_MIN + half_span) as f32);
    let std = g.exp(log_std);
    let eps = g.constant(noise.clone());
    let dev = g.mul(std, eps);
    let pre = g.add(mean, dev);
    let action = g.tanh(pre);
    // log N(pre; mean, std) reduces to -eps^2/2 - log_std - ln(2pi)/2 under
    // reparameterization; the -eps^2/2 part carries no gradient.
    let const_term = g.constant(noise.mapv(|e| -0.5 * e * e - 0.5 * LN_2PI as f32));
    let g_terms = g.sub(const_term, log_std);
    let a2 = g.square(action);
    let na2 = g.neg(a2);
    let one_m = g.add_scalar(na2, 1.0 + 1e-6);
    let squash = g.ln(one_m);
    let per_dim = g.sub(g_terms, squash);
    let logp = g.sum_rows(per_dim);
    let det = g.tanh(mean);
    (action, logp, det)
}

/// Q(s, a) for one critic.
pub fn q_forward(
    g: &mut Graph<f32>,
    cache: &mut NodeCache,
    st: &ParamStore<f32>,
    q: &Mlp,
    obs: NodeId,
    action: NodeId,
) -> NodeId {
    let x = g.concat_cols(&[obs, action]);
    mlp_forward(g, cache, st, x, q)
}

/// Filtered optimizer step: only parameters whose name satisfies `pred`.
pub struct FilteredAdam {
    inner: AdamW<f32>,
}

impl FilteredAdam {
    pub fn new(store: &ParamStore<f32>, lr: f64) -> FilteredAdam {
        FilteredAdam {
            inner: AdamW::new(store, lr, 0.0),
        }
    }

    pub fn step_where(
        &mut self,
        store: &mut ParamStore<f32>,
        grads: &crate::nn::graph::Gradients<f32>,
        pred: impl Fn(&str) -> bool,
    ) {
        self.inner.step_filtered(store, grads, pred);
    }
}
