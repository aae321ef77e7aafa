//! The invertible value squashing `h` and the two-hot categorical encoding.

use serde::{Deserialize, Serialize};

use crate::envs::EnvId;

pub const TRANSFORM_EPSILON: f64 = 0.001;

/// `h(x) = sign(x)(√(|x| + 1) − 1) + εx`.
pub fn scalar_transform(x: f64) -> f64 {
    x.signum() * ((x.abs() + 1.0).sqrt() - 1.0) + TRANSFORM_EPSILON * x
}

/// Closed-form inverse of [`scalar_transform`], from the quadratic in `√(|x| + 1)`.
pub fn inverse_transform(y: f64) -> f64 {
    let eps = TRANSFORM_EPSILON;
    let root = ((1.0 + 4.0 * eps * (y.abs() + 1.0 + eps)).sqrt() - 1.0) / (2.0 * eps);
    y.signum() * (root * root - 1.0)
}

/// A categorical support of `bins` evenly spaced centers on `[-max, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub bins: usize,
    pub max: f64,
}

pub const DEFAULT_BINS: usize = 20;

impl Support {
    pub fn new(bins: usize, max: f64) -> Self {
        assert!(bins >= 2, "a support needs at least two bins");
        assert!(max > 0.0, "support bound must be positive");
        Support { bins, max }
    }

    /// Support bound in transformed units chosen to cover each task's returns.
    pub fn for_env(env: EnvId) -> Self {
        let max = match env {
            EnvId::Catch => 2.0,
            EnvId::Cartpole => 30.0,
            EnvId::MountainCar => 32.0,
        };
        Support::new(DEFAULT_BINS, max)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.max / (self.bins - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.max + i as f64 * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    /// Two-hot weights for an already transformed value, clipped into the support.
    pub fn encode(&self, y: f64) -> Vec<f32> {
        let mut weights = vec![0.0; self.bins];
        let y = y.clamp(-self.max, self.max);
        let position = (y + self.max) / self.spacing();
        let lower = (position.floor() as usize).min(self.bins - 2);
        let upper_weight = (y - self.center(lower)) / self.spacing();
        let upper_weight = upper_weight.clamp(0.0, 1.0);
        weights[lower] = (1.0 - upper_weight) as f32;
        weights[lower + 1] = upper_weight as f32;
        weights
    }

    /// Expected bin center under `probs`, in transformed units.
    pub fn expectation(&self, probs: &[f32]) -> f64 {
        probs
            .iter()
            .enumerate()
            .map(|(i, &p)| p as f64 * self.center(i))
            .sum()
    }

    /// Two-hot target for a raw scalar: `φ(h(x))`.
    pub fn target(&self, x: f64) -> Vec<f32> {
        self.encode(scalar_transform(x))
    }

    /// Raw scalar read off a distribution over this support: `h⁻¹(E[φ])`.
    pub fn to_scalar(&self, probs: &[f32]) -> f64 {
        inverse_transform(self.expectation(probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transform_values() {
        assert_eq!(scalar_transform(0.0), 0.0);
        assert!((scalar_transform(1.0) - 0.415_214).abs() < 1e-6);
        assert_eq!(scalar_transform(-1.0), -scalar_transform(1.0));
        assert!((scalar_transform(1000.0) - 31.6386).abs() < 1e-3);
    }

    #[test]
    fn center_bin_reads_zero() {
        let odd = Support::new(21, 2.0);
        let mut probs = vec![0.0; 21];
        probs[10] = 1.0;
        assert!(odd.to_scalar(&probs).abs() < 1e-12);

        let even = Support::for_env(EnvId::Catch);
        let mut probs = vec![0.0; even.bins];
        probs[9] = 0.5;
        probs[10] = 0.5;
        assert!(even.to_scalar(&probs).abs() < 1e-12);
    }

    #[test]
    fn encode_cases() {
        let s = Support::new(5, 2.0);
        assert_eq!(s.encode(1.0), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.encode(0.5), vec![0.0, 0.0, 0.5, 0.5, 0.0]);
        assert_eq!(s.encode(7.0), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.encode(-9.0), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn inverse_undoes_transform(x in -300.0f64..300.0) {
            prop_assert!((inverse_transform(scalar_transform(x)) - x).abs() < 1e-6);
        }

        #[test]
        fn two_hot_sums_to_one_and_recovers(y in -40.0f64..40.0) {
            let s = Support::for_env(EnvId::MountainCar);
            let w = s.encode(y);
            prop_assert!((w.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.iter().filter(|&&v| v > 0.0).count() <= 2);
            prop_assert!((s.expectation(&w) - y.clamp(-s.max, s.max)).abs() < 1e-5);
        }
    }
}
