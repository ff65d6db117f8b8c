//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Graph`] is a single-use tape: ops evaluate eagerly and record a backward
//! closure. All node values are `Array2<R>`; scalars are `[1, 1]`, row vectors
//! `[1, N]`, column vectors `[M, 1]`. Variable-length sequences are laid out
//! ragged (rows concatenated, lengths carried alongside) instead of padded,
//! which keeps every row-wise op mask-free.
//!
//! Determinism: all reductions run in fixed index order, and the parallel
//! attention path writes per-sequence blocks that are assembled in sequence
//! order, so results are bit-identical regardless of thread count.

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use super::params::{ParamId, ParamStore};
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

type Grads<R> = Vec<Option<Array2<R>>>;
type BackFn<R> = Box<dyn Fn(&[Array2<R>], &Array2<R>, &mut Grads<R>) + Send + Sync>;

fn accum<R: Real>(grads: &mut Grads<R>, id: NodeId, delta: Array2<R>) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Gradients with respect to parameters, keyed by [`ParamId`].
pub struct Gradients<R: Real> {
    by_param: Vec<Option<Array2<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<R>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<R: Real> {
    values: Vec<Array2<R>>,
    backs: Vec<Option<BackFn<R>>>,
    params: Vec<Option<ParamId>>,
    n_params: usize,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            backs: Vec::new(),
            params: Vec::new(),
            n_params: 0,
        }
    }

    fn push(&mut self, value: Array2<R>, back: Option<BackFn<R>>) -> NodeId {
        self.values.push(value);
        self.backs.push(back);
        self.params.push(None);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<R> {
        &self.values[id.0]
    }

    pub fn scalar_value(&self, id: NodeId) -> R {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn constant(&mut self, v: Array2<R>) -> NodeId {
        self.push(v, None)
    }

    pub fn scalar(&mut self, v: R) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Insert a parameter leaf. Its gradient is collected in [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> NodeId {
        let node = self.push(store.value(id).clone(), None);
        self.params[node.0] = Some(id);
        self.n_params = self.n_params.max(id.0 + 1);
        node
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Gradients<R> {
        assert_eq!(
            self.values[loss.0].dim(),
            (1, 1),
            "backward requires a scalar loss node"
        );
        let mut grads: Grads<R> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), R::one()));
        let mut by_param: Vec<Option<Array2<R>>> = (0..self.n_params).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(f) = &self.backs[i] {
                f(&self.values, &g, &mut grads);
            } else if let Some(pid) = self.params[i] {
                match &mut by_param[pid.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { by_param }
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, a, g.clone());
                accum(grads, b, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, a, g.clone());
                accum(grads, b, g.mapv(|x| -x));
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, a, g * &vals[b.0]);
                accum(grads, b, g * &vals[a.0]);
            })),
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] / &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, a, g / &vals[b.0]);
                let gb = g * &vals[a.0] / (&vals[b.0] * &vals[b.0]);
                accum(grads, b, gb.mapv(|x| -x));
            })),
        )
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        let mut v = va.clone();
        v.zip_mut_with(vb, |x, &y| {
            if y < *x {
                *x = y
            }
        });
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let va = &vals[a.0];
                let vb = &vals[b.0];
                let mut ga = g.clone();
                let mut gb = g.clone();
                for ((gae, gbe), (&x, &y)) in ga
                    .iter_mut()
                    .zip(gb.iter_mut())
                    .zip(va.iter().zip(vb.iter()))
                {
                    if x <= y {
                        *gbe = R::zero();
                    } else {
                        *gae = R::zero();
                    }
                }
                accum(grads, a, ga);
                accum(grads, b, gb);
            })),
        )
    }

    /// `[M, N] + [1, N]` broadcast (bias add).
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let v = &self.values[x.0] + &self.values[row.0];
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, g.clone());
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                accum(grads, row, gr);
            })),
        )
    }

    /// `[M, N] * [M, 1]` broadcast.
    pub fn mul_col(&mut self, x: NodeId, col: NodeId) -> NodeId {
        let v = &self.values[x.0] * &self.values[col.0];
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, x, g * &vals[col.0]);
                let gc = (g * &vals[x.0]).sum_axis(Axis(1)).insert_axis(Axis(1));
                accum(grads, col, gc);
            })),
        )
    }

    /// `[M, N] / [M, 1]` broadcast.
    pub fn div_col(&mut self, x: NodeId, col: NodeId) -> NodeId {
        let v = &self.values[x.0] / &self.values[col.0];
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, x, g / &vals[col.0]);
                let num = (g * &vals[x.0]).sum_axis(Axis(1)).insert_axis(Axis(1));
                let c = &vals[col.0];
                let gc = -(num / (c * c));
                accum(grads, col, gc);
            })),
        )
    }

    // ---- elementwise unary ----

    pub fn scale(&mut self, x: NodeId, k: R) -> NodeId {
        let v = self.values[x.0].mapv(|a| a * k);
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, g.mapv(|a| a * k));
            })),
        )
    }

    pub fn add_scalar(&mut self, x: NodeId, k: R) -> NodeId {
        let v = self.values[x.0].mapv(|a| a + k);
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, g.clone());
            })),
        )
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -R::one())
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| if a > R::zero() { a } else { R::zero() });
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let mut gx = g.clone();
                gx.zip_mut_with(&vals[x.0], |ge, &xe| {
                    if xe <= R::zero() {
                        *ge = R::zero()
                    }
                });
                accum(grads, x, gx);
            })),
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let c0 = R::from_f64(0.7978845608028654); // sqrt(2/pi)
        let c1 = R::from_f64(0.044715);
        let half = R::from_f64(0.5);
        let three = R::from_f64(3.0);
        let v = self.values[x.0].mapv(|a| {
            let u = c0 * (a + c1 * a * a * a);
            half * a * (R::one() + u.tanh())
        });
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let mut gx = vals[x.0].mapv(|a| {
                    let u = c0 * (a + c1 * a * a * a);
                    let t = u.tanh();
                    half * (R::one() + t)
                        + half * a * (R::one() - t * t) * c0 * (R::one() + three * c1 * a * a)
                });
                gx *= g;
                accum(grads, x, gx);
            })),
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.tanh());
        let out = self.push(v, None);
        self.backs[out.0] = Some(Box::new(move |vals, g, grads| {
            let y = &vals[out.0];
            accum(grads, x, g * &y.mapv(|t| R::one() - t * t));
        }));
        out
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.exp());
        let out = self.push(v, None);
        self.backs[out.0] = Some(Box::new(move |vals, g, grads| {
            accum(grads, x, g * &vals[out.0]);
        }));
        out
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.ln());
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, x, g / &vals[x.0]);
            })),
        )
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.sqrt());
        let out = self.push(v, None);
        let half = R::from_f64(0.5);
        self.backs[out.0] = Some(Box::new(move |vals, g, grads| {
            accum(grads, x, g * &vals[out.0].mapv(|y| half / y));
        }));
        out
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a * a);
        let two = R::from_f64(2.0);
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accum(grads, x, g * &vals[x.0].mapv(|a| two * a));
            })),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| R::one() / (R::one() + (-a).exp()));
        let out = self.push(v, None);
        self.backs[out.0] = Some(Box::new(move |vals, g, grads| {
            let y = &vals[out.0];
            accum(grads, x, g * &y.mapv(|s| s * (R::one() - s)));
        }));
        out
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| {
            let m = if a > R::zero() { a } else { R::zero() };
            m + (R::one() + (-(a.abs())).exp()).ln()
        });
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let gx = vals[x.0].mapv(|a| R::one() / (R::one() + (-a).exp()));
                accum(grads, x, g * &gx);
            })),
        )
    }

    // ---- matmul / reshape ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_a: bool, trans_b: bool) -> NodeId {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        let v = {
            let av = if trans_a { va.t() } else { va.view() };
            let bv = if trans_b { vb.t() } else { vb.view() };
            R::matmul(av, bv)
        };
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let va = &vals[a.0];
                let vb = &vals[b.0];
                // dA' = g @ B'^T, dB' = A'^T @ g, where X' is X possibly transposed
                let bv = if trans_b { vb.view() } else { vb.t() };
                let da_p = R::matmul(g.view(), bv);
                let av = if trans_a { va.view() } else { va.t() };
                let db_p = R::matmul(av, g.view());
                let da = if trans_a {
                    da_p.t().to_owned()
                } else {
                    da_p
                };
                let db = if trans_b {
                    db_p.t().to_owned()
                } else {
                    db_p
                };
                accum(grads, a, da);
                accum(grads, b, db);
            })),
        )
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].t().to_owned();
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, g.t().to_owned());
            })),
        )
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r0, c0) = self.values[x.0].dim();
        assert_eq!(r0 * c0, rows * cols, "reshape must preserve element count");
        let v = self.values[x.0]
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((rows, cols))
            .expect("reshape");
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let gx = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order((r0, c0))
                    .expect("reshape grad");
                accum(grads, x, gx);
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x.0].iter().copied().sum::<R>();
        let dim = self.values[x.0].dim();
        self.push(
            Array2::from_elem((1, 1), s),
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, Array2::from_elem(dim, g[[0, 0]]));
            })),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let dim = self.values[x.0].dim();
        let n = R::from_f64((dim.0 * dim.1) as f64);
        let s = self.values[x.0].iter().copied().sum::<R>() / n;
        self.push(
            Array2::from_elem((1, 1), s),
            Some(Box::new(move |_vals, g, grads| {
                accum(grads, x, Array2::from_elem(dim, g[[0, 0]] / n));
            })),
        )
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        let cols = self.values[x.0].dim().1;
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let rows = g.dim().0;
                let mut gx = Array2::zeros((rows, cols));
                for i in 0..rows {
                    let gi = g[[i, 0]];
                    gx.row_mut(i).fill(gi);
                }
                accum(grads, x, gx);
            })),
        )
    }

    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].sum_axis(Axis(0)).insert_axis(Axis(0));
        let rows = self.values[x.0].dim().0;
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let cols = g.dim().1;
                let mut gx = Array2::zeros((rows, cols));
                for i in 0..rows {
                    gx.row_mut(i).assign(&g.row(0));
                }
                accum(grads, x, gx);
            })),
        )
    }

    /// Row-wise `ln Σ_j exp(x_ij)` with max-subtraction; output `[M, 1]`.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> NodeId {
        let vx = &self.values[x.0];
        let m = vx.dim().0;
        let mut out = Array2::zeros((m, 1));
        for i in 0..m {
            let row = vx.row(i);
            let mx = row.iter().copied().fold(R::neg_infinity(), |a, b| a.max(b));
            let s = row.iter().map(|&a| (a - mx).exp()).sum::<R>();
            out[[i, 0]] = mx + s.ln();
        }
        let out_node = self.push(out, None);
        self.backs[out_node.0] = Some(Box::new(move |vals, g, grads| {
            let vx = &vals[x.0];
            let vy = &vals[out_node.0];
            let mut gx = vx.clone();
            for i in 0..vx.dim().0 {
                let yi = vy[[i, 0]];
                let gi = g[[i, 0]];
                for e in gx.row_mut(i).iter_mut() {
                    *e = gi * (*e - yi).exp();
                }
            }
            accum(grads, x, gx);
        }));
        out_node
    }

    // ---- gather / scatter / stack ----

    pub fn select_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let vx = &self.values[x.0];
        let cols = vx.dim().1;
        let mut v = Array2::zeros((idx.len(), cols));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&vx.row(i));
        }
        let rows_in = vx.dim().0;
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let mut gx = Array2::zeros((rows_in, cols));
                for (k, &i) in idx.iter().enumerate() {
                    let mut r = gx.row_mut(i);
                    r += &g.row(k);
                }
                accum(grads, x, gx);
            })),
        )
    }

    /// `out[i, 0] = x[i, idx[i]]`.
    pub fn select_one_per_row(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let vx = &self.values[x.0];
        let (rows, cols) = vx.dim();
        assert_eq!(idx.len(), rows);
        let mut v = Array2::zeros((rows, 1));
        for (i, &j) in idx.iter().enumerate() {
            v[[i, 0]] = vx[[i, j]];
        }
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let mut gx = Array2::zeros((rows, cols));
                for (i, &j) in idx.iter().enumerate() {
                    gx[[i, j]] = g[[i, 0]];
                }
                accum(grads, x, gx);
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.values[parts[0].0].dim().1;
        let total: usize = parts.iter().map(|p| self.values[p.0].dim().0).sum();
        let mut v = Array2::zeros((total, cols));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut o = 0;
        for p in parts {
            let vp = &self.values[p.0];
            let r = vp.dim().0;
            v.slice_mut(s![o..o + r, ..]).assign(vp);
            offsets.push((*p, o, r));
            o += r;
        }
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                for &(p, o, r) in &offsets {
                    accum(grads, p, g.slice(s![o..o + r, ..]).to_owned());
                }
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.values[parts[0].0].dim().0;
        let total: usize = parts.iter().map(|p| self.values[p.0].dim().1).sum();
        let mut v = Array2::zeros((rows, total));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut o = 0;
        for p in parts {
            let vp = &self.values[p.0];
            let c = vp.dim().1;
            v.slice_mut(s![.., o..o + c]).assign(vp);
            offsets.push((*p, o, c));
            o += c;
        }
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                for &(p, o, c) in &offsets {
                    accum(grads, p, g.slice(s![.., o..o + c]).to_owned());
                }
            })),
        )
    }

    /// Mean over consecutive groups of `group` rows: `[G*group, N] -> [G, N]`.
    pub fn mean_pool_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let vx = &self.values[x.0];
        let (rows, cols) = vx.dim();
        assert_eq!(rows % group, 0);
        let g_count = rows / group;
        let inv = R::from_f64(1.0 / group as f64);
        let mut v = Array2::zeros((g_count, cols));
        for gi in 0..g_count {
            let block = vx.slice(s![gi * group..(gi + 1) * group, ..]);
            let summed = block.sum_axis(Axis(0));
            v.row_mut(gi).assign(&summed.mapv(|a| a * inv));
        }
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let mut gx = Array2::zeros((rows, cols));
                for gi in 0..g_count {
                    for r in 0..group {
                        let mut row = gx.row_mut(gi * group + r);
                        row.assign(&g.row(gi).mapv(|a| a * inv));
                    }
                }
                accum(grads, x, gx);
            })),
        )
    }

    /// Per-sequence running mean over rows: within a sequence of length T, output
    /// row t is the mean of input rows 0..=t. Accumulation is carried in f64 so
    /// the full-sequence mean is effectively order-independent.
    pub fn prefix_mean_rows(&mut self, x: NodeId, seq_lens: Vec<usize>) -> NodeId {
        let vx = &self.values[x.0];
        let (rows, cols) = vx.dim();
        assert_eq!(rows, seq_lens.iter().sum::<usize>());
        let mut v = Array2::zeros((rows, cols));
        let mut o = 0;
        for &t_len in &seq_lens {
            let mut acc = vec![0.0f64; cols];
            for t in 0..t_len {
                for c in 0..cols {
                    acc[c] += vx[[o + t, c]].as_f64();
                }
                let inv = 1.0 / (t + 1) as f64;
                for c in 0..cols {
                    v[[o + t, c]] = R::from_f64(acc[c] * inv);
                }
            }
            o += t_len;
        }
        let lens = seq_lens;
        self.push(
            v,
            Some(Box::new(move |_vals, g, grads| {
                let mut gx = Array2::zeros((rows, cols));
                let mut o = 0;
                for &t_len in &lens {
                    // dX[s] = sum_{t>=s} dY[t] / (t+1): reverse running sum
                    let mut acc = vec![R::zero(); cols];
                    for t in (0..t_len).rev() {
                        let inv = R::from_f64(1.0 / (t + 1) as f64);
                        for c in 0..cols {
                            acc[c] += g[[o + t, c]] * inv;
                            gx[[o + t, c]] = acc[c];
                        }
                    }
                    o += t_len;
                }
                accum(grads, x, gx);
            })),
        )
    }

    // ---- layer norm ----

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let vx = &self.values[x.0];
        let vg = &self.values[gamma.0];
        let vb = &self.values[beta.0];
        let (rows, cols) = vx.dim();
        let epsr = R::from_f64(eps);
        let inv_d = R::from_f64(1.0 / cols as f64);
        let mut v = Array2::zeros((rows, cols));
        for i in 0..rows {
            let row = vx.row(i);
            let mu = row.iter().copied().sum::<R>() * inv_d;
            let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<R>() * inv_d;
            let inv_sigma = R::one() / (var + epsr).sqrt();
            for j in 0..cols {
                let xhat = (row[j] - mu) * inv_sigma;
                v[[i, j]] = xhat * vg[[0, j]] + vb[[0, j]];
            }
        }
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let vx = &vals[x.0];
                let vg = &vals[gamma.0];
                let mut gx = Array2::zeros((rows, cols));
                let mut ggamma = Array2::zeros((1, cols));
                let mut gbeta = Array2::zeros((1, cols));
                for i in 0..rows {
                    let row = vx.row(i);
                    let mu = row.iter().copied().sum::<R>() * inv_d;
                    let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<R>() * inv_d;
                    let inv_sigma = R::one() / (var + epsr).sqrt();
                    let mut mean_dxhat = R::zero();
                    let mut mean_dxhat_xhat = R::zero();
                    for j in 0..cols {
                        let xhat = (row[j] - mu) * inv_sigma;
                        let dy = g[[i, j]];
                        gbeta[[0, j]] += dy;
                        ggamma[[0, j]] += dy * xhat;
                        let dxhat = dy * vg[[0, j]];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    for j in 0..cols {
                        let xhat = (row[j] - mu) * inv_sigma;
                        let dxhat = g[[i, j]] * vg[[0, j]];
                        gx[[i, j]] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_sigma;
                    }
                }
                accum(grads, x, gx);
                accum(grads, gamma, ggamma);
                accum(grads, beta, gbeta);
            })),
        )
    }

    // ---- attention ----

    /// Multi-head scaled dot-product attention over ragged sequences.
    ///
    /// `q`, `k`, `v` are `[sum(seq_lens), D]`; heads split D evenly. With
    /// `causal` set, position i attends to positions `<= i` of its own sequence.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        seq_lens: Vec<usize>,
        causal: bool,
    ) -> NodeId {
        let d = self.values[q.0].dim().1;
        assert_eq!(d % heads, 0, "embed dim must divide into heads");
        let dh = d / heads;
        let scale = R::from_f64(1.0 / (dh as f64).sqrt());
        let offsets: Vec<usize> = seq_lens
            .iter()
            .scan(0usize, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect();
        let total: usize = seq_lens.iter().sum();
        assert_eq!(self.values[q.0].dim().0, total);

        let vq = &self.values[q.0];
        let vk = &self.values[k.0];
        let vv = &self.values[v.0];

        // Forward per (sequence, head); parallel over sequences, assembled in order.
        let per_seq: Vec<(Array2<R>, Vec<Array2<R>>)> = seq_lens
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(&t_len, &o)| {
                let mut out_block = Array2::zeros((t_len, d));
                let mut attn_mats = Vec::with_capacity(heads);
                for h in 0..heads {
                    let cs = h * dh;
                    let qh = vq.slice(s![o..o + t_len, cs..cs + dh]);
                    let kh = vk.slice(s![o..o + t_len, cs..cs + dh]);
                    let vh = vv.slice(s![o..o + t_len, cs..cs + dh]);
                    let mut scores = R::matmul(qh, kh.t());
                    scores.mapv_inplace(|a| a * scale);
                    if causal {
                        for i in 0..t_len {
                            for j in (i + 1)..t_len {
                                scores[[i, j]] = R::neg_infinity();
                            }
                        }
                    }
                    // row softmax
                    for i in 0..t_len {
                        let mut row = scores.row_mut(i);
                        let mx = row.iter().copied().fold(R::neg_infinity(), |a, b| a.max(b));
                        let mut sum = R::zero();
                        for e in row.iter_mut() {
                            *e = (*e - mx).exp();
                            sum += *e;
                        }
                        let inv = R::one() / sum;
                        for e in row.iter_mut() {
                            *e *= inv;
                        }
                    }
                    let oh = R::matmul(scores.view(), vh);
                    out_block.slice_mut(s![.., cs..cs + dh]).assign(&oh);
                    attn_mats.push(scores);
                }
                (out_block, attn_mats)
            })
            .collect();

        let mut out = Array2::zeros((total, d));
        let mut saved_attn = Vec::with_capacity(seq_lens.len());
        for ((&t_len, &o), (block, mats)) in
            seq_lens.iter().zip(offsets.iter()).zip(per_seq.into_iter())
        {
            out.slice_mut(s![o..o + t_len, ..]).assign(&block);
            saved_attn.push(mats);
        }

        let lens = seq_lens;
        self.push(
            out,
            Some(Box::new(move |vals, g, grads| {
                let vq = &vals[q.0];
                let vk = &vals[k.0];
                let vv = &vals[v.0];
                let blocks: Vec<(Array2<R>, Array2<R>, Array2<R>)> = lens
                    .par_iter()
                    .zip(offsets.par_iter())
                    .enumerate()
                    .map(|(si, (&t_len, &o))| {
                        let mut gq_b = Array2::zeros((t_len, d));
                        let mut gk_b = Array2::zeros((t_len, d));
                        let mut gv_b = Array2::zeros((t_len, d));
                        for h in 0..heads {
                            let cs = h * dh;
                            let a = &saved_attn[si][h];
                            let qh = vq.slice(s![o..o + t_len, cs..cs + dh]);
                            let kh = vk.slice(s![o..o + t_len, cs..cs + dh]);
                            let vh = vv.slice(s![o..o + t_len, cs..cs + dh]);
                            let go = g.slice(s![o..o + t_len, cs..cs + dh]);
                            let gv_h = R::matmul(a.t(), go);
                            let ga = R::matmul(go, vh.t().view());
                            // dS = A ⊙ (dA - rowsum(dA ⊙ A))
                            let mut ds = ga;
                            for i in 0..t_len {
                                let arow = a.row(i);
                                let dot = ds
                                    .row(i)
                                    .iter()
                                    .zip(arow.iter())
                                    .map(|(&x, &y)| x * y)
                                    .sum::<R>();
                                for (e, &ae) in ds.row_mut(i).iter_mut().zip(arow.iter()) {
                                    *e = ae * (*e - dot);
                                }
                            }
                            let gq_h = R::matmul(ds.view(), kh).mapv(|a| a * scale);
                            let gk_h = R::matmul(ds.t(), qh).mapv(|a| a * scale);
                            gq_b.slice_mut(s![.., cs..cs + dh]).assign(&gq_h);
                            gk_b.slice_mut(s![.., cs..cs + dh]).assign(&gk_h);
                            gv_b.slice_mut(s![.., cs..cs + dh]).assign(&gv_h);
                        }
                        (gq_b, gk_b, gv_b)
                    })
                    .collect();
                let mut gq = Array2::zeros((total, d));
                let mut gk = Array2::zeros((total, d));
                let mut gv = Array2::zeros((total, d));
                for ((&t_len, &o), (bq, bk, bv)) in
                    lens.iter().zip(offsets.iter()).zip(blocks.into_iter())
                {
                    gq.slice_mut(s![o..o + t_len, ..]).assign(&bq);
                    gk.slice_mut(s![o..o + t_len, ..]).assign(&bk);
                    gv.slice_mut(s![o..o + t_len, ..]).assign(&bv);
                }
                accum(grads, q, gq);
                accum(grads, k, gk);
                accum(grads, v, gv);
            })),
        )
    }
}
