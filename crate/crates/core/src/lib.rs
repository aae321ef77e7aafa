pub mod data;
pub mod envs;
pub mod error;
pub mod expyard;
pub mod improve;
pub mod math;
pub mod mcts;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
