//! AdamW with decoupled weight decay, plus gradient clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 7e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(config: AdamWConfig, first: Vec<Tensor>, second: Vec<Tensor>, step: u64) -> Self {
        assert_eq!(first.len(), second.len());
        OptimizerState {
            config,
            first,
            second,
            step,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One update at the configured learning rate.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        let lr = self.config.learning_rate;
        self.update_with(params, grads, lr, None);
    }

    /// One update at learning rate `lr`. When `trainable` is given, only the
    /// flagged parameters (and their moments) are touched.
    pub fn update_with(
        &mut self,
        params: &mut ParamSet,
        grads: &[Tensor],
        lr: f32,
        trainable: Option<&[bool]>,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let (bc1, bc2) = (bc1 as f32, bc2 as f32);

        for i in 0..params.len() {
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            let p = params.tensor(i);
            let g = &grads[i];
            assert_eq!(p.shape(), g.shape(), "gradient shape for {}", params.names()[i]);
            let mut m = self.first[i].to_vec();
            let mut v = self.second[i].to_vec();
            let mut out = p.to_vec();
            for (((w, &g), m), v) in out.iter_mut().zip(g.data()).zip(&mut m).zip(&mut v) {
                *w -= lr * weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = p.shape().to_vec();
            params.set(i, Tensor::from_parts(shape.clone(), out));
            self.first[i] = Tensor::from_parts(shape.clone(), m);
            self.second[i] = Tensor::from_parts(shape, v);
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f32 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt() as f32
}

/// Rescales all gradients by `max_norm / norm` when their joint L2 norm
/// exceeds `max_norm`. Returns the clipped gradients and the pre-clip norm.
pub fn clip_by_global_norm(grads: Vec<Tensor>, max_norm: f32) -> (Vec<Tensor>, f32) {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(&grads);
    if norm <= max_norm {
        return (grads, norm);
    }
    let scale = max_norm / norm;
    let clipped = grads.into_iter().map(|g| g.map(|x| x * scale)).collect();
    (clipped, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f32) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::vector(vec![p]));
        ps
    }

    /// Scalar Adam written out in f64, independent of the tensor code.
    fn reference_adam(p0: f64, grads: &[f64], lr: f64, decay: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            p -= lr * decay * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        p
    }

    #[test]
    fn single_step_matches_reference() {
        let mut ps = single(1.0);
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&ps, cfg);
        opt.update(&mut ps, &[Tensor::vector(vec![1.0])]);
        let expected = reference_adam(1.0, &[1.0], 0.1, 0.0);
        assert!((expected - 0.9).abs() < 1e-6);
        assert!((ps.tensor(0).data()[0] as f64 - expected).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn multi_step_matches_reference() {
        let grads = [0.3, -1.2, 0.7, 2.0, -0.1];
        let mut ps = single(0.5);
        let cfg = AdamWConfig {
            learning_rate: 0.05,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&ps, cfg);
        for &g in &grads {
            opt.update(&mut ps, &[Tensor::vector(vec![g as f32])]);
        }
        let expected = reference_adam(0.5, &grads, 0.05, 0.01);
        assert!((ps.tensor(0).data()[0] as f64 - expected).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut ps = single(1.5);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&ps, cfg);
        opt.update(&mut ps, &[Tensor::vector(vec![0.0])]);
        assert_eq!(ps.tensor(0).data(), &[1.5]);
    }

    #[test]
    fn decay_only_halves() {
        let mut ps = single(2.0);
        let cfg = AdamWConfig {
            learning_rate: 1.0,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&ps, cfg);
        opt.update(&mut ps, &[Tensor::vector(vec![0.0])]);
        assert_eq!(ps.tensor(0).data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut ps = single(2.0);
        ps.push("q", Tensor::vector(vec![3.0]));
        let mut opt = OptimizerState::new(&ps, AdamWConfig::default());
        let g = [Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        opt.update_with(&mut ps, &g, 0.1, Some(&[true, false]));
        assert_ne!(ps.tensor(0).data(), &[2.0]);
        assert_eq!(ps.tensor(1).data(), &[3.0]);
    }

    #[test]
    fn clipping_cases() {
        let g = || vec![Tensor::vector(vec![3.0, 4.0])];
        let (out, norm) = clip_by_global_norm(g(), 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(out[0].data(), &[3.0, 4.0]);

        let (out, _) = clip_by_global_norm(g(), 1.0);
        assert!((out[0].data()[0] - 0.6).abs() < 1e-7);
        assert!((out[0].data()[1] - 0.8).abs() < 1e-7);

        let (out, norm) = clip_by_global_norm(vec![Tensor::zeros([3])], 1.0);
        assert_eq!(norm, 0.0);
        assert_eq!(out[0].data(), &[0.0, 0.0, 0.0]);
    }
}
