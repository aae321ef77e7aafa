//! Grid sweeps over one experimental knob.
//!
//! A sweep trains every algorithm at every grid value under every master
//! seed, each run in its own directory below `out/runs`, then writes
//! `runs.csv`, `summary.csv` and `summary.md` to `out`. Failed runs are
//! recorded and the sweep carries on.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::{iqm, mean_std, normalized_score};
use crate::data::{collect_dqn, default_episodes, load_dataset_for, save_dataset, Dataset};
use crate::envs::NoiseConfig;
use crate::error::{Error, Result};
use crate::trainer::{run_training, Algorithm, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Share of dataset episodes kept.
    Coverage,
    /// Action-noise level of the collected dataset.
    Noise,
    /// Dynamics hidden width.
    Capacity,
    /// Search simulations and depth.
    Simulation,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [
        SweepKind::Coverage,
        SweepKind::Noise,
        SweepKind::Capacity,
        SweepKind::Simulation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Coverage => "coverage",
            SweepKind::Noise => "noise",
            SweepKind::Capacity => "capacity",
            SweepKind::Simulation => "simulation",
        }
    }

    pub fn default_grid(self) -> Vec<GridValue> {
        match self {
            SweepKind::Coverage => [1.0, 0.1, 0.01].map(GridValue::Fraction).to_vec(),
            SweepKind::Noise => [0.0, 0.1, 0.3, 0.5].map(GridValue::Epsilon).to_vec(),
            SweepKind::Capacity => [16, 64, 256, 1024].map(GridValue::Capacity).to_vec(),
            SweepKind::Simulation => [2, 4, 8, 16]
                .into_iter()
                .flat_map(|simulations| [1, 2, 0].map(|depth| GridValue::Search { simulations, depth }))
                .collect(),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep kind `{s}`")))
    }
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridValue {
    Fraction(f64),
    Epsilon(f32),
    Capacity(usize),
    /// `depth` 0 is unlimited.
    Search { simulations: usize, depth: usize },
}

impl GridValue {
    pub fn kind(&self) -> SweepKind {
        match self {
            GridValue::Fraction(_) => SweepKind::Coverage,
            GridValue::Epsilon(_) => SweepKind::Noise,
            GridValue::Capacity(_) => SweepKind::Capacity,
            GridValue::Search { .. } => SweepKind::Simulation,
        }
    }

    /// Short name used in tables and run directory names.
    pub fn label(&self) -> String {
        match *self {
            GridValue::Fraction(f) => format!("fraction={f}"),
            GridValue::Epsilon(e) => format!("eps={e}"),
            GridValue::Capacity(h) => format!("capacity={h}"),
            GridValue::Search { simulations, depth: 0 } => format!("n={simulations},d=inf"),
            GridValue::Search { simulations, depth } => format!("n={simulations},d={depth}"),
        }
    }

    /// Writes this grid point into a training config. Noise levels change
    /// the dataset rather than the config, so they leave it untouched.
    pub fn apply(&self, config: &mut TrainConfig) {
        match *self {
            GridValue::Fraction(f) => config.fraction = f,
            GridValue::Epsilon(_) => {}
            GridValue::Capacity(h) => config.capacity = h,
            GridValue::Search { simulations, depth } => {
                config.search.simulations = simulations;
                config.search.max_depth = depth;
            }
        }
    }

    fn parse(kind: SweepKind, value: &serde_json::Value) -> Result<Self> {
        let bad = || Error::Config(format!("grid value {value} does not fit a {kind} sweep"));
        Ok(match kind {
            SweepKind::Coverage => GridValue::Fraction(value.as_f64().ok_or_else(bad)?),
            SweepKind::Noise => GridValue::Epsilon(value.as_f64().ok_or_else(bad)? as f32),
            SweepKind::Capacity => GridValue::Capacity(value.as_u64().ok_or_else(bad)? as usize),
            SweepKind::Simulation => {
                let field = |name: &str| value.get(name).and_then(serde_json::Value::as_u64).ok_or_else(bad);
                GridValue::Search {
                    simulations: field("simulations")? as usize,
                    depth: field("depth")? as usize,
                }
            }
        })
    }
}

/// Everything a sweep needs. Loaded from JSON by [`SweepSpec::from_json`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<GridValue>,
    pub base: TrainConfig,
    /// Master seeds; each is mixed with the grid index to seed a run.
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    /// Dataset shared by all cells. Collected into `out/datasets` when
    /// absent, and always collected per cell for noise sweeps.
    pub dataset: Option<PathBuf>,
    pub dataset_episodes: Option<usize>,
    pub dataset_seed: u64,
    /// Concurrent runs; 0 uses every available core.
    pub workers: usize,
    pub out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    kind: Option<SweepKind>,
    grid: Option<Vec<serde_json::Value>>,
    #[serde(default)]
    base: TrainConfig,
    seeds: Option<Vec<u64>>,
    algorithms: Option<Vec<Algorithm>>,
    dataset: Option<PathBuf>,
    dataset_episodes: Option<usize>,
    #[serde(default)]
    dataset_seed: u64,
    #[serde(default)]
    workers: usize,
    out: Option<PathBuf>,
}

impl SweepSpec {
    /// Default grid, seeds 0..3 and the base config's algorithm.
    pub fn new(kind: SweepKind, base: TrainConfig, out: impl Into<PathBuf>) -> Self {
        SweepSpec {
            kind,
            grid: kind.default_grid(),
            algorithms: vec![base.algorithm],
            base,
            seeds: vec![0, 1, 2],
            dataset: None,
            dataset_episodes: None,
            dataset_seed: 0,
            workers: 0,
            out: out.into(),
        }
    }

    /// Parses a sweep file. `kind` comes from the command line when given and
    /// must then agree with the file; missing fields take the defaults of
    /// [`SweepSpec::new`].
    pub fn from_json(text: &str, kind: Option<SweepKind>) -> Result<Self> {
        let file: SweepFile = serde_json::from_str(text)?;
        let kind = match (kind, file.kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("sweep file is a {b} sweep, not {a}")));
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("sweep kind not given".into())),
        };
        let out = file.out.unwrap_or_else(|| PathBuf::from(format!("sweeps/{kind}")));
        let mut spec = SweepSpec::new(kind, file.base, out);
        if let Some(grid) = file.grid {
            spec.grid = grid.iter().map(|v| GridValue::parse(kind, v)).collect::<Result<_>>()?;
        }
        if let Some(seeds) = file.seeds {
            spec.seeds = seeds;
        }
        if let Some(algorithms) = file.algorithms {
            spec.algorithms = algorithms;
        }
        spec.dataset = file.dataset;
        spec.dataset_episodes = file.dataset_episodes;
        spec.dataset_seed = file.dataset_seed;
        spec.workers = file.workers;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>, kind: Option<SweepKind>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SweepSpec::from_json(&text, kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.seeds.is_empty() || self.algorithms.is_empty() {
            return Err(Error::Config("a sweep needs a grid value, a seed and an algorithm".into()));
        }
        if let Some(v) = self.grid.iter().find(|v| v.kind() != self.kind) {
            return Err(Error::Config(format!("{} does not belong in a {} sweep", v.label(), self.kind)));
        }
        if let Some(v) = self.grid.iter().find(|v| matches!(v, GridValue::Epsilon(e) if !(0.0..=1.0).contains(e))) {
            return Err(Error::Config(format!("{} is not a probability", v.label())));
        }
        self.base.validate()?;
        for (_, config) in self.cell_configs(self.base.algorithm) {
            config.validate()?;
        }
        Ok(())
    }

    /// The training config of every grid point for one algorithm, before
    /// seeding.
    pub fn cell_configs(&self, algorithm: Algorithm) -> Vec<(GridValue, TrainConfig)> {
        self.grid
            .iter()
            .map(|v| {
                let mut config = self.base.clone();
                config.algorithm = algorithm;
                v.apply(&mut config);
                (*v, config)
            })
            .collect()
    }

    /// Number of training runs the sweep performs.
    pub fn run_count(&self) -> usize {
        self.grid.len() * self.seeds.len() * self.algorithms.len()
    }
}

/// Seed of the run at grid index `cell` under a master seed. Algorithms
/// share it, so comparisons within a cell are paired.
pub fn cell_seed(master: u64, cell: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(cell as u64);
    rng.next_u64()
}

/// Outcome of one run, as written to `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: SweepKind,
    pub algorithm: Algorithm,
    pub env: String,
    pub setting: String,
    pub seed: u64,
    pub run_seed: u64,
    pub ok: bool,
    pub final_return_mean: f64,
    /// IQM of the final evaluation's normalized returns.
    pub final_score_iqm: f64,
    pub error: String,
}

/// Aggregate of one (algorithm, grid value) cell, as written to `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub kind: SweepKind,
    pub algorithm: Algorithm,
    pub env: String,
    pub setting: String,
    pub runs: usize,
    pub failed: usize,
    /// IQM over the pooled seed × episode normalized returns.
    pub score_iqm: f64,
    /// Sample std of the per-seed IQMs.
    pub score_std: f64,
    pub return_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn cell(&self, algorithm: Algorithm, setting: &GridValue) -> Option<&CellSummary> {
        let label = setting.label();
        self.cells.iter().find(|c| c.algorithm == algorithm && c.setting == label)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| algorithm | setting | runs | failed | IQM score | ± std | mean return |\n");
        out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for c in &self.cells {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.3} | {:.3} | {:.3} |\n",
                c.algorithm, c.setting, c.runs, c.failed, c.score_iqm, c.score_std, c.return_mean
            ));
        }
        out
    }
}

struct Job {
    algorithm: Algorithm,
    cell: usize,
    seed: u64,
}

fn dataset_path(spec: &SweepSpec, epsilon: f32) -> PathBuf {
    spec.out
        .join("datasets")
        .join(format!("{}-eps{epsilon}-seed{}.ds", spec.base.env, spec.dataset_seed))
}

fn obtain_dataset(spec: &SweepSpec, epsilon: f32) -> Result<Dataset> {
    if let (Some(path), false) = (&spec.dataset, spec.kind == SweepKind::Noise) {
        return load_dataset_for(path, spec.base.env);
    }
    let path = dataset_path(spec, epsilon);
    if path.exists() {
        return load_dataset_for(&path, spec.base.env);
    }
    let episodes = spec.dataset_episodes.unwrap_or_else(|| default_episodes(spec.base.env));
    let noise = NoiseConfig::new(epsilon, spec.dataset_seed)?;
    let dataset = collect_dqn(spec.base.env, episodes, noise, spec.dataset_seed)?;
    let parent = path.parent().expect("dataset path has a directory");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    save_dataset(&dataset, &path)?;
    Ok(dataset)
}

fn run_one(spec: &SweepSpec, job: &Job, dataset: &Dataset, out: &Path) -> Result<(f64, Vec<f64>)> {
    let mut config = spec.cell_configs(job.algorithm).swap_remove(job.cell).1;
    config.seed = cell_seed(job.seed, job.cell);
    let summary = run_training(&config, dataset, out)?;
    let scores = summary
        .final_returns
        .iter()
        .map(|&r| normalized_score(config.env, r))
        .collect();
    Ok((summary.final_return_mean(), scores))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// [`run_sweep_with`] without a progress callback.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep_with(spec, |_| {})
}

/// Runs every cell on a bounded pool of worker threads and writes the
/// tables. `on_run` sees each record as its run finishes, in completion
/// order; the returned and written tables are in grid order.
pub fn run_sweep_with(spec: &SweepSpec, on_run: impl Fn(&RunRecord) + Sync) -> Result<SweepResult> {
    spec.validate()?;
    fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;

    let datasets: Vec<Dataset> = if spec.kind == SweepKind::Noise {
        spec.grid
            .iter()
            .map(|v| match v {
                GridValue::Epsilon(e) => obtain_dataset(spec, *e),
                _ => unreachable!("validated grid"),
            })
            .collect::<Result<_>>()?
    } else {
        vec![obtain_dataset(spec, 0.0)?]
    };

    let mut jobs = Vec::with_capacity(spec.run_count());
    for &algorithm in &spec.algorithms {
        for cell in 0..spec.grid.len() {
            for &seed in &spec.seeds {
                jobs.push(Job { algorithm, cell, seed });
            }
        }
    }

    let workers = match spec.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let setting = spec.grid[job.cell];
                let dataset = &datasets[if datasets.len() == 1 { 0 } else { job.cell }];
                let dir = spec
                    .out
                    .join("runs")
                    .join(format!("{}-{}-seed{}", job.algorithm, setting.label(), job.seed));
                let outcome = run_one(spec, job, dataset, &dir);
                let mut record = RunRecord {
                    kind: spec.kind,
                    algorithm: job.algorithm,
                    env: spec.base.env.to_string(),
                    setting: setting.label(),
                    seed: job.seed,
                    run_seed: cell_seed(job.seed, job.cell),
                    ok: outcome.is_ok(),
                    final_return_mean: f64::NAN,
                    final_score_iqm: f64::NAN,
                    error: String::new(),
                };
                match outcome.and_then(|(mean, scores)| Ok((mean, iqm(&scores)?))) {
                    Ok((mean, score)) => {
                        record.final_return_mean = mean;
                        record.final_score_iqm = score;
                    }
                    Err(e) => {
                        record.ok = false;
                        record.error = e.to_string();
                    }
                }
                on_run(&record);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(record);
            });
        }
    });
    let runs: Vec<RunRecord> = slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every job leaves a record"))
        .collect();

    let mut cells = Vec::new();
    for &algorithm in &spec.algorithms {
        for (cell, setting) in spec.grid.iter().enumerate() {
            let label = setting.label();
            let members: Vec<(usize, &RunRecord)> = runs
                .iter()
                .enumerate()
                .filter(|(i, _)| jobs[*i].algorithm == algorithm && jobs[*i].cell == cell)
                .collect();
            let ok: Vec<&(usize, &RunRecord)> = members.iter().filter(|(_, r)| r.ok).collect();
            let mut pooled = Vec::new();
            for (i, _) in &ok {
                let job = &jobs[*i];
                let dir = spec
                    .out
                    .join("runs")
                    .join(format!("{}-{}-seed{}", job.algorithm, label, job.seed));
                pooled.extend(final_scores(&dir)?);
            }
            let per_seed: Vec<f64> = ok.iter().map(|(_, r)| r.final_score_iqm).collect();
            let returns: Vec<f64> = ok.iter().map(|(_, r)| r.final_return_mean).collect();
            cells.push(CellSummary {
                kind: spec.kind,
                algorithm,
                env: spec.base.env.to_string(),
                setting: label,
                runs: members.len(),
                failed: members.len() - ok.len(),
                score_iqm: if pooled.is_empty() { f64::NAN } else { iqm(&pooled)? },
                score_std: mean_std(&per_seed).1,
                return_mean: mean_std(&returns).0,
            });
        }
    }

    let result = SweepResult { runs, cells };
    write_csv(&spec.out.join("runs.csv"), &result.runs)?;
    write_csv(&spec.out.join("summary.csv"), &result.cells)?;
    let md_path = spec.out.join("summary.md");
    let title = format!("# {} sweep on {}\n\n", spec.kind, spec.base.env);
    fs::write(&md_path, title + &result.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
    Ok(result)
}

/// Normalized returns of a run's last evaluation, read back from disk.
fn final_scores(dir: &Path) -> Result<Vec<f64>> {
    let rows = super::report::eval_rows(dir)?;
    let last = rows.iter().map(|r| r.step).max().unwrap_or(0);
    Ok(rows.iter().filter(|r| r.step == last).map(|r| r.normalized_score).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    #[test]
    fn default_grids() {
        assert_eq!(SweepKind::Coverage.default_grid().len(), 3);
        assert_eq!(SweepKind::Noise.default_grid().len(), 4);
        assert_eq!(
            SweepKind::Capacity.default_grid(),
            [16, 64, 256, 1024].map(GridValue::Capacity).to_vec()
        );
        let sims = SweepKind::Simulation.default_grid();
        assert_eq!(sims.len(), 12);
        assert_eq!(sims[2], GridValue::Search { simulations: 2, depth: 0 });
        assert_eq!(sims[2].label(), "n=2,d=inf");
    }

    #[test]
    fn capacity_cells_differ_only_in_dynamics_width() {
        let spec = SweepSpec::new(SweepKind::Capacity, TrainConfig::new(Algorithm::Rosmo, EnvId::Catch), "x");
        for (v, config) in spec.cell_configs(Algorithm::Rosmo) {
            let GridValue::Capacity(h) = v else { panic!("{v:?}") };
            assert_eq!(config.capacity, h);
            assert_eq!(TrainConfig { capacity: spec.base.capacity, ..config.clone() }, spec.base);
            let (a, b) = (config.architecture(), spec.base.architecture());
            assert_eq!(a.with_capacity(b.dynamics_capacity), b);
        }
    }

    #[test]
    fn parses_files_and_rejects_mismatches() {
        let text = r#"{"grid": [{"simulations": 2, "depth": 0}], "seeds": [4], "algorithms": ["mzu", "rosmo"],
                       "base": {"total_updates": 10}}"#;
        let spec = SweepSpec::from_json(text, Some(SweepKind::Simulation)).unwrap();
        assert_eq!(spec.grid, vec![GridValue::Search { simulations: 2, depth: 0 }]);
        assert_eq!(spec.base.total_updates, 10);
        assert_eq!(spec.run_count(), 2);
        assert!(SweepSpec::from_json(text, Some(SweepKind::Coverage)).is_err());
        assert!(SweepSpec::from_json(text, None).is_err());
        assert!(SweepSpec::from_json(r#"{"kind": "noise", "seeds": []}"#, None).is_err());
        assert!(SweepSpec::from_json(r#"{"kind": "noise", "grid": [2.0]}"#, None).is_err());
        assert!(SweepSpec::from_json(r#"{"kind": "noise", "bogus": 1}"#, None).is_err());
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..4).map(|c| cell_seed(7, c)).collect();
        assert_eq!(seeds, (0..4).map(|c| cell_seed(7, c)).collect::<Vec<_>>());
        let mut unique = seeds.clone();
        unique.dedup();
        assert_eq!(unique.len(), 4);
        assert_ne!(cell_seed(7, 0), cell_seed(8, 0));
    }
}
