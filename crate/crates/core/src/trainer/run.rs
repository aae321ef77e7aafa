//! The training loop and its on-disk artifacts.
//!
//! A run directory holds `manifest.json` (resolved config and dataset
//! identity), `metrics.csv` (one row per evaluation), `eval_returns.csv`
//! (every evaluation episode) and `checkpoint.ckpt` (rewritten at each
//! evaluation). Rerunning into a directory that holds the same run resumes
//! from its checkpoint.

use std::borrow::Cow;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::losses::LossReport;
use super::state::{online_weights, train_step, update_rng, TrainState};
use crate::data::{Dataset, SegmentSampler};
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::expyard::normalized_score;
use crate::math::checkpoint;
use crate::model::NetworkWeights;

pub const RUN_FORMAT: &str = "rosmo-run-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval_returns.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// One metrics row: loss means over the updates since the previous row and
/// the evaluation at `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub reward_loss: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub episode_return_mean: f64,
    pub normalized_score: f64,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "step",
    "reward_loss",
    "value_loss",
    "policy_loss",
    "reg_loss",
    "total_loss",
    "grad_norm",
    "learning_rate",
    "episode_return_mean",
    "normalized_score",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub normalized_score: f64,
}

const EVAL_COLUMNS: [&str; 4] = ["step", "episode", "return", "normalized_score"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub env: EnvId,
    pub epsilon: f32,
    pub seed: u64,
    pub episodes: usize,
    pub transitions: usize,
    pub average_return: f64,
    /// CRC32 of the dataset payload.
    pub checksum: u32,
    /// Episodes left after coverage sub-sampling.
    pub training_episodes: usize,
    pub training_transitions: usize,
}

impl DatasetInfo {
    fn describe(full: &Dataset, training: &Dataset) -> Self {
        DatasetInfo {
            env: full.env,
            epsilon: full.epsilon,
            seed: full.seed,
            episodes: full.episodes(),
            transitions: full.transitions(),
            average_return: full.average_return(),
            checksum: full.checksum(),
            training_episodes: training.episodes(),
            training_transitions: training.transitions(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: TrainConfig,
    pub dataset: DatasetInfo,
    /// Wall-clock creation time; the only non-deterministic field of a run.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.format != RUN_FORMAT {
            return Err(Error::Version {
                expected: RUN_FORMAT.into(),
                found: manifest.format,
            });
        }
        Ok(manifest)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    /// Returns of the last evaluation.
    pub final_returns: Vec<f64>,
    /// Step of the checkpoint this invocation started from, if any.
    pub resumed_from: Option<u64>,
}

impl RunSummary {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("a finished run has at least one row")
    }

    pub fn final_return_mean(&self) -> f64 {
        self.final_row().episode_return_mean
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Corrupt(format!("{}: {other:?}", path.display())),
    }
}

pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T], append: bool) -> Result<()> {
    let file = if append {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !append {
        writer.write_record(header).map_err(|e| csv_error(path, e))?;
    }
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Loads the online network of a checkpoint, taking the architecture from
/// the manifest in the same directory.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RunManifest, NetworkWeights)> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let manifest = RunManifest::load(dir)?;
    let weights = online_weights(&manifest.config, &checkpoint::load(path)?)?;
    Ok((manifest, weights))
}

/// [`run_training_with`] without a progress callback.
pub fn run_training(config: &TrainConfig, dataset: &Dataset, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    run_training_with(config, dataset, out_dir, |_| {})
}

/// Trains for `config.total_updates` updates, evaluating every
/// `eval_interval` updates and after the last one. `on_row` sees each
/// metrics row as it is written.
pub fn run_training_with(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: impl AsRef<Path>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<RunSummary> {
    config.validate()?;
    if dataset.env != config.env {
        return Err(Error::EnvMismatch {
            expected: config.env.to_string(),
            found: dataset.env.to_string(),
        });
    }
    let training: Cow<'_, Dataset> = if config.fraction < 1.0 {
        Cow::Owned(dataset.subsample(config.fraction, config.seed)?)
    } else {
        Cow::Borrowed(dataset)
    };
    let sampler = SegmentSampler::new(&training, config.unroll, config.td_steps, config.episode_end)?;

    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let eval_path = out.join(EVAL_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let info = DatasetInfo::describe(dataset, &training);

    let mut rows: Vec<MetricsRow>;
    let mut final_returns = Vec::new();
    let mut resumed_from = None;
    let mut state = match RunManifest::load(out) {
        Ok(previous) if ckpt_path.exists() => {
            if previous.config != *config || previous.dataset != info {
                return Err(Error::Config(format!(
                    "{} holds a different run; choose a fresh output directory",
                    out.display()
                )));
            }
            let state = TrainState::from_params(config, &checkpoint::load(&ckpt_path)?)?;
            rows = read_rows::<MetricsRow>(&metrics_path)?;
            rows.retain(|r| r.step <= state.step);
            write_rows(&metrics_path, &METRICS_COLUMNS, &rows, false)?;
            let mut evals = read_rows::<EvalRow>(&eval_path)?;
            evals.retain(|r| r.step <= state.step);
            write_rows(&eval_path, &EVAL_COLUMNS, &evals, false)?;
            final_returns = evals
                .iter()
                .filter(|r| r.step == state.step)
                .map(|r| r.episode_return)
                .collect();
            resumed_from = Some(state.step);
            state
        }
        _ => {
            let created_unix = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            RunManifest {
                format: RUN_FORMAT.into(),
                config: config.clone(),
                dataset: info,
                created_unix,
            }
            .save(out)?;
            write_rows::<MetricsRow>(&metrics_path, &METRICS_COLUMNS, &[], false)?;
            write_rows::<EvalRow>(&eval_path, &EVAL_COLUMNS, &[], false)?;
            rows = Vec::new();
            TrainState::new(config)?
        }
    };

    let search = config.search_config();
    let mut sums = LossReport::default();
    let mut count = 0u64;
    while state.step < config.total_updates {
        let mut rng = update_rng(config.seed, state.step);
        let segments = sampler.sample_batch(config.batch_size, &mut rng);
        let lr = config.learning_rate_at(state.step);
        let r = train_step(&mut state, &segments, config, &mut rng)?;
        sums.reward += r.reward;
        sums.value += r.value;
        sums.policy += r.policy;
        sums.regularizer += r.regularizer;
        sums.total += r.total;
        sums.grad_norm += r.grad_norm;
        count += 1;

        if state.step % config.eval_interval == 0 || state.step == config.total_updates {
            let returns = evaluate(&state.online, config.algorithm, &search, config.env, config.eval_episodes)?;
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            let n = count as f64;
            let row = MetricsRow {
                step: state.step,
                reward_loss: sums.reward / n,
                value_loss: sums.value / n,
                policy_loss: sums.policy / n,
                reg_loss: sums.regularizer / n,
                total_loss: sums.total / n,
                grad_norm: sums.grad_norm / n,
                learning_rate: lr as f64,
                episode_return_mean: mean,
                normalized_score: normalized_score(config.env, mean),
            };
            let evals: Vec<EvalRow> = returns
                .iter()
                .enumerate()
                .map(|(episode, &ret)| EvalRow {
                    step: state.step,
                    episode,
                    episode_return: ret,
                    normalized_score: normalized_score(config.env, ret),
                })
                .collect();
            write_rows(&metrics_path, &METRICS_COLUMNS, std::slice::from_ref(&row), true)?;
            write_rows(&eval_path, &EVAL_COLUMNS, &evals, true)?;
            checkpoint::save(&state.to_params(), &ckpt_path)?;
            on_row(&row);
            rows.push(row);
            final_returns = returns;
            sums = LossReport::default();
            count = 0;
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("run finished without an evaluation row".into()));
    }
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        rows,
        final_returns,
        resumed_from,
    })
}
