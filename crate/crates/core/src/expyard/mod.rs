//! Experiment harness: normalized scores, interquartile means, sweeps over
//! one knob at a time, and comparison tables across finished runs.

mod report;
mod score;
mod sweep;

pub use report::{report, score_run, Report, ReportRow, RunScore};
pub use score::{iqm, mean_std, normalized_score, ScoreAnchors};
pub use sweep::{
    cell_seed, run_sweep, run_sweep_with, CellSummary, GridValue, RunRecord, SweepKind, SweepResult, SweepSpec,
};
