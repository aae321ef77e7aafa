//! The offline learning loop: window batching, `K`-step model unroll,
//! targets from a pluggable improvement operator, the weighted loss, AdamW
//! updates, periodic evaluation and checkpointing.

mod config;
mod eval;
mod losses;
mod run;
mod state;

pub use config::{Algorithm, TrainConfig};
pub use eval::{evaluate, greedy_actions, EVAL_SEED_BASE};
pub use losses::{
    behavior_cloning_loss, compute_losses, unroll, unroll_inputs, LossReport, LossWeights, Unrolled,
};
pub use run::{
    load_checkpoint, run_training, run_training_with, DatasetInfo, EvalRow, MetricsRow, RunManifest,
    RunSummary, CHECKPOINT_FILE, EVAL_FILE, MANIFEST_FILE, METRICS_COLUMNS, METRICS_FILE, RUN_FORMAT,
};
pub(crate) use run::read_rows;
pub use state::{bc_step, build_targets, loss_weights, online_weights, train_step, update_rng, TrainState};
