//! Adam with bias correction, global-norm gradient clipping, and decoupled
//! weight decay.

use crate::autodiff::nn::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold applied across all gradients of a step.
    pub clip_norm: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            weight_decay: 1e-6,
            clip_norm: 100.0,
        }
    }
}

/// Per-parameter first and second moment estimates plus the step counter.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

/// Euclidean norm over the concatenation of all gradient tensors.
pub fn global_grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients down so their global norm is at most `max_norm`.
/// Returns the norm before clipping. Direction is preserved.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy)]
pub struct AdamStepInfo {
    pub step: u64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let v = store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Adam { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Apply one update. Gradients are clipped by global norm first; weight
    /// decay is applied to the weights directly rather than via gradients.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Vec<Tensor>) -> Result<AdamStepInfo> {
        assert_eq!(grads.len(), store.len(), "gradient list must match store layout");
        for g in &grads {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for ((param, grad), (m, v)) in store
            .tensors_mut()
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            for ((w, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.cfg.lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *w);
            }
        }
        Ok(AdamStepInfo {
            step: self.step,
            grad_norm,
            clipped: grad_norm > self.cfg.clip_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(value));
        store
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut store = single_param_store(0.7);
        let mut cfg = AdamConfig::with_lr(3e-4);
        cfg.weight_decay = 0.0;
        let mut adam = Adam::new(cfg, &store);
        adam.step(&mut store, vec![Tensor::scalar(0.0)]).unwrap();
        assert_eq!(store.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn global_norm_200_clips_to_half() {
        // Two gradients whose combined norm is 200 get scaled by 0.5.
        let mut grads = vec![
            Tensor::row(vec![120.0, 0.0]),
            Tensor::row(vec![0.0, 160.0]),
        ];
        let norm = clip_global_norm(&mut grads, 100.0);
        assert!((norm - 200.0).abs() < 1e-12);
        assert_eq!(grads[0].data(), &[60.0, 0.0]);
        assert_eq!(grads[1].data(), &[0.0, 80.0]);
        assert!((global_grad_norm(&grads) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_descent_shrinks_weight() {
        // f(w) = w^2, grad = 2w; |w| must strictly decrease every step.
        let mut store = single_param_store(1.0);
        let mut cfg = AdamConfig::with_lr(3e-4);
        cfg.weight_decay = 0.0;
        let mut adam = Adam::new(cfg, &store);
        let mut prev = 1.0f64;
        for _ in 0..200 {
            let w = store.tensors()[0].data()[0];
            adam.step(&mut store, vec![Tensor::scalar(2.0 * w)]).unwrap();
            let now = store.tensors()[0].data()[0].abs();
            assert!(now < prev, "|w| must strictly decrease, {now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_error() {
        let mut store = single_param_store(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &store);
        let r = adam.step(&mut store, vec![Tensor::scalar(f64::NAN)]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn step_counter_increases() {
        let mut store = single_param_store(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &store);
        for expected in 1..=5 {
            let info = adam.step(&mut store, vec![Tensor::scalar(0.1)]).unwrap();
            assert_eq!(info.step, expected);
        }
    }
}
