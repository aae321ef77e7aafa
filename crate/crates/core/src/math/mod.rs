//! Tensors, reverse-mode gradients and the optimizer shared by every network.

pub mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheck};
pub use layers::{Activation, Dense, Mlp};
pub use optim::{clip_by_global_norm, global_norm, AdamWConfig, OptimizerState};
pub use params::ParamSet;
pub use tape::{elu, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;
