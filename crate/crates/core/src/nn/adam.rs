use ndarray::Array2;

use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::real::Real;

/// AdamW: Adam moments with decoupled weight decay.
///
/// Decay applies to matrix-shaped parameters only (weights, embeddings);
/// biases and layer-norm vectors are exempt.
pub struct AdamW<R: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Array2<R>>,
    v: Vec<Array2<R>>,
}

impl<R: Real> AdamW<R> {
    pub fn new(store: &ParamStore<R>, lr: f64, weight_decay: f64) -> Self {
        let m = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        let v = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>) {
        self.step_filtered(store, grads, |_| true);
    }

    /// Update only parameters whose name satisfies `pred` (used when several
    /// networks share one store and are trained by separate losses).
    pub fn step_filtered(
        &mut self,
        store: &mut ParamStore<R>,
        grads: &Gradients<R>,
        pred: impl Fn(&str) -> bool,
    ) {
        self.step += 1;
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one_m_b1 = R::from_f64(1.0 - self.beta1);
        let one_m_b2 = R::from_f64(1.0 - self.beta2);
        let bc1 = R::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = R::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = R::from_f64(self.lr);
        let eps = R::from_f64(self.eps);
        let wd = R::from_f64(self.lr * self.weight_decay);
        for id in (0..store.len()).map(ParamId) {
            let Some(g) = grads.get(id) else { continue };
            if !pred(store.name(id)) {
                continue;
            }
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(g, |me, &ge| *me = b1 * *me + one_m_b1 * ge);
            v.zip_mut_with(g, |ve, &ge| *ve = b2 * *ve + one_m_b2 * ge * ge);
            let decayed = {
                let (r, c) = store.value(id).dim();
                r > 1 && c > 1
            };
            let p = store.value_mut(id);
            for ((pe, &me), &ve) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = me / bc1;
                let v_hat = ve / bc2;
                *pe = *pe - lr * m_hat / (v_hat.sqrt() + eps);
                if decayed {
                    *pe = *pe - wd * *pe;
                }
            }
        }
    }
}

/// Scalar Adam, used for the entropy temperature in SAC.
pub struct ScalarAdam {
    pub lr: f64,
    step: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam {
            lr,
            step: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, value: &mut f64, grad: f64) {
        self.step += 1;
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.step as i32));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.step as i32));
        *value -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
    }
}
