use super::network::NetworkWeights;
use crate::math::{softmax_row, Tensor};

/// Gradient-free access to a latent model, one latent per matrix row.
///
/// Planning and target construction only need these two calls, so stub
/// models with hand-set rewards and values can stand in for a network.
pub trait LatentModel {
    fn action_count(&self) -> usize;

    /// Prior policy and scalar value for each latent.
    fn predict_rows(&self, latents: &Tensor) -> (Vec<Vec<f32>>, Vec<f64>);

    /// Scalar reward and next latent for each `(latent, action)` row pair.
    fn step_rows(&self, latents: &Tensor, actions: &[usize]) -> (Vec<f64>, Tensor);
}

impl LatentModel for NetworkWeights {
    fn action_count(&self) -> usize {
        self.architecture().action_count
    }

    fn predict_rows(&self, latents: &Tensor) -> (Vec<Vec<f32>>, Vec<f64>) {
        let (policy, value) = self.predict_batch(latents);
        let priors = (0..policy.rows()).map(|r| softmax_row(policy.row(r))).collect();
        (priors, self.decode_rows(&value))
    }

    fn step_rows(&self, latents: &Tensor, actions: &[usize]) -> (Vec<f64>, Tensor) {
        let (reward, next) = self.dynamics_batch(latents, actions);
        (self.decode_rows(&reward), next)
    }
}
