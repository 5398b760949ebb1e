use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

/// Bias-corrected Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = store.param_ids().map(|id| store.value(id).zeros_like()).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.num_params() != self.m.len() {
            return Err(Error::Registry(format!(
                "optimizer tracks {} parameters, store holds {}",
                self.m.len(),
                store.num_params()
            )));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.param_ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if store.grad(id).shape() != self.m[k].shape() {
                return Err(Error::Registry(format!(
                    "gradient of `{}` has shape {:?}, optimizer state {:?}",
                    store.name(id),
                    store.grad(id).shape(),
                    self.m[k].shape()
                )));
            }
            let g: Vec<f64> = store.grad(id).data().iter().map(|v| v.f64()).collect();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let w = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                let mi = b1 * m[i].f64() + (1.0 - b1) * g[i];
                let vi = b2 * v[i].f64() + (1.0 - b2) * g[i] * g[i];
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let upd = lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                w[i] = T::of(w[i].f64() - upd);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `base` at `t = 0` to `min` at `t = total`. Both
/// endpoints are returned exactly.
pub fn cosine_lr(t: usize, total: usize, base: f64, min: f64) -> f64 {
    if t == 0 {
        return base;
    }
    if t >= total {
        return min;
    }
    min + 0.5 * (base - min) * (1.0 + (PI * t as f64 / total as f64).cos())
}
