//! Adam with bias correction and per-group learning rates.

use super::dense::DenseMatrix;
use super::tape::{Gradients, ParamStore};
use crate::error::Error;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state: first/second moment per parameter tensor plus the shared
/// step counter. Learning rates are resolved per tensor from its group at
/// construction time.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    lr: Vec<f64>,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    /// `group_lr[g]` supplies the learning rate for every tensor in group `g`.
    pub fn new(store: &ParamStore, group_lr: &[f64]) -> Self {
        let mut lr = Vec::with_capacity(store.len());
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, e) in store.iter() {
            lr.push(group_lr[e.group]);
            m.push(DenseMatrix::zeros(e.value.rows(), e.value.cols()));
            v.push(DenseMatrix::zeros(e.value.rows(), e.value.cols()));
        }
        AdamState { step: 0, lr, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[DenseMatrix], &[DenseMatrix]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<DenseMatrix>, v: Vec<DenseMatrix>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One bias-corrected update of every tensor in the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), Error> {
        for (id, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    store.entry(id).name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (id, g) in grads.iter() {
            let i = id.0;
            let lr = self.lr[i];
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            let p = store.value_mut(id).values_mut();
            for ((pv, (mv, vv)), &gv) in p
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g.values())
            {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}
