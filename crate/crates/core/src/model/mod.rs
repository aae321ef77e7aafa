//! The latent model: representation `h`, dynamics `g` and prediction `f`,
//! with categorical reward and value heads.

mod latent;
mod network;
mod transform;

pub use latent::LatentModel;
pub use network::{
    network_gradient_check, update_target, Architecture, BoundNetwork, LatentState, NetworkWeights, Predictions, TargetNetwork, Transition,
};
pub use transform::{inverse_transform, scalar_transform, Support, DEFAULT_BINS, TRANSFORM_EPSILON};
