use serde::{Deserialize, Serialize};

use crate::numcore::params::ParamStore;
use crate::numcore::scalar::Scalar;

/// AdamW hyperparameters. Weight decay is decoupled: applied multiplicatively
/// to the weights, never folded into the gradient moments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
pub struct AdamW<S: Scalar> {
    pub config: AdamWConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig, store: &ParamStore<S>) -> Self {
        let m = store
            .iter()
            .map(|p| vec![S::zero(); p.value.len()])
            .collect();
        let v = store
            .iter()
            .map(|p| vec![S::zero(); p.value.len()])
            .collect();
        AdamW {
            config,
            m,
            v,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every trainable parameter with the given lr.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) {
        self.t += 1;
        let b1 = S::of(self.config.beta1);
        let b2 = S::of(self.config.beta2);
        let eps = S::of(self.config.eps);
        let lr_s = S::of(lr);
        let bc1 = S::of(1.0 - self.config.beta1.powi(self.t as i32));
        let bc2 = S::of(1.0 - self.config.beta2.powi(self.t as i32));
        let decay = S::of(1.0 - lr * self.config.weight_decay);
        let one = S::one();

        for idx in 0..store.len() {
            if !store.trainable(idx) {
                continue;
            }
            let grad = store.grad_of(idx).data().to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let value = store.value_mut(idx).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                // decoupled decay first, then the Adam step
                value[i] = value[i] * decay - lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Flatten optimizer state for checkpointing: (m, v) per parameter index.
    pub fn state(&self) -> (u64, &[Vec<S>], &[Vec<S>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<S>>, v: Vec<Vec<S>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    pub fn moment_slices(&mut self) -> (&mut Vec<Vec<S>>, &mut Vec<Vec<S>>) {
        (&mut self.m, &mut self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::tensor::Tensor;

    fn store_with_scalar(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(x), true);
        s
    }

    #[test]
    fn zero_grad_zero_decay_leaves_parameter_unchanged() {
        let mut store = store_with_scalar(1.5);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store, 0.1);
        assert_eq!(store.value(0).data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // p=1, g=1, lr=0.1, default betas/eps, wd=0: bias correction makes the
        // first step ~lr.
        let mut store = store_with_scalar(1.0);
        store.add_grad(0, &[1.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store, 0.1);
        let p = store.value(0).data()[0];
        assert!((p - 0.9).abs() < 1e-7, "expected ~0.9, got {p}");
    }

    #[test]
    fn decoupled_decay_shrinks_by_factor() {
        let mut store = store_with_scalar(2.0);
        let cfg = AdamWConfig {
            weight_decay: 0.001,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store, 0.1);
        let expected = 2.0 * (1.0 - 0.1 * 0.001);
        assert_eq!(store.value(0).data()[0], expected);
    }

    #[test]
    fn convex_quadratic_loss_decreases_monotonically() {
        // f(p) = 0.5 p^2, grad = p, lr = 1e-3, wd = 0
        let mut store = store_with_scalar(3.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        let mut prev = 0.5 * 3.0f64 * 3.0;
        for _ in 0..100 {
            let p = store.value(0).data()[0];
            store.zero_grads();
            store.add_grad(0, &[p]);
            opt.step(&mut store, 1e-3);
            let pnew = store.value(0).data()[0];
            let loss = 0.5 * pnew * pnew;
            assert!(loss < prev, "loss must decrease: {loss} !< {prev}");
            prev = loss;
        }
    }
}
