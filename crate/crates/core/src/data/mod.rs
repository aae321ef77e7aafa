//! Recorded episodes: collection, persistence, sub-sampling and the window
//! sampler that feeds the learner.

mod collect;
mod dataset;
mod sampler;

pub use collect::{collect_dqn, collect_dqn_with, default_episodes, default_input_scale, DqnConfig};
pub use dataset::{load_dataset, load_dataset_for, save_dataset, Dataset, Trajectory, DATASET_VERSION};
pub use sampler::{sample_segment, EpisodeEnd, Segment, SegmentSampler};

pub(crate) use collect::argmax;
