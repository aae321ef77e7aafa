//! Benchmark tables merged from finished run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::score::{iqm, mean_std};
use crate::error::{Error, Result};
use crate::trainer::{read_rows, EvalRow, MetricsRow, RunManifest, EVAL_FILE, MANIFEST_FILE, METRICS_COLUMNS, METRICS_FILE};

/// Scores of one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub dir: PathBuf,
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    pub final_step: u64,
    /// IQM of the normalized returns at the last evaluation.
    pub final_iqm: f64,
    /// Highest per-evaluation IQM over the run.
    pub best_iqm: f64,
    pub final_return_mean: f64,
}

/// One line of the comparison table: runs of an algorithm on a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub env: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    pub return_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub runs: Vec<RunScore>,
    pub rows: Vec<ReportRow>,
    /// Run directories found while searching that had not finished.
    pub skipped: Vec<PathBuf>,
}

impl Report {
    pub fn row(&self, algorithm: &str, env: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.env == env)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| algorithm | env | runs | final IQM | best IQM | final return |\n");
        out.push_str("|---|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} |\n",
                r.algorithm, r.env, r.runs, r.final_mean, r.final_std, r.best_mean, r.best_std, r.return_mean
            ));
        }
        out
    }

    /// Writes `report.csv`, `report_runs.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("report.csv"), &self.rows)?;
        write_csv(&dir.join("report_runs.csv"), &self.runs)?;
        let md = dir.join("report.md");
        fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let corrupt = |e: csv::Error| Error::Corrupt(format!("{}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(corrupt)?;
    for row in rows {
        writer.serialize(row).map_err(corrupt)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn eval_rows(dir: &Path) -> Result<Vec<EvalRow>> {
    read_rows(&dir.join(EVAL_FILE))
}

fn check_metrics_header(path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Schema(format!(
            "{} has columns {:?}, expected {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            METRICS_COLUMNS
        )));
    }
    Ok(())
}

/// Scores one run directory, or `None` if its last row is short of the
/// configured number of updates.
pub fn score_run(dir: impl AsRef<Path>) -> Result<Option<RunScore>> {
    let dir = dir.as_ref();
    let manifest = RunManifest::load(dir)?;
    let metrics_path = dir.join(METRICS_FILE);
    check_metrics_header(&metrics_path)?;
    let metrics: Vec<MetricsRow> = read_rows(&metrics_path)?;
    let Some(last) = metrics.last() else { return Ok(None) };
    if last.step != manifest.config.total_updates {
        return Ok(None);
    }
    let evals = eval_rows(dir)?;
    let mut best = f64::NEG_INFINITY;
    let mut final_iqm = f64::NAN;
    for row in &metrics {
        let scores: Vec<f64> = evals
            .iter()
            .filter(|e| e.step == row.step)
            .map(|e| e.normalized_score)
            .collect();
        if scores.is_empty() {
            return Err(Error::Schema(format!("{}: no episodes for step {}", dir.display(), row.step)));
        }
        let value = iqm(&scores)?;
        best = best.max(value);
        final_iqm = value;
    }
    Ok(Some(RunScore {
        dir: dir.to_path_buf(),
        algorithm: manifest.config.algorithm.to_string(),
        env: manifest.config.env.to_string(),
        seed: manifest.config.seed,
        final_step: last.step,
        final_iqm,
        best_iqm: best,
        final_return_mean: last.episode_return_mean,
    }))
}

/// Run directories at or below `root`, in sorted order.
fn find_runs(root: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(MANIFEST_FILE).is_file() {
        found.push(root.to_path_buf());
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        find_runs(&child, found)?;
    }
    Ok(())
}

/// Merges the runs at or below each directory into one table, grouped by
/// algorithm and task. A directory passed directly must hold a finished run;
/// unfinished runs found by searching are listed in `skipped`.
pub fn report<P: AsRef<Path>>(dirs: &[P]) -> Result<Report> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        let dir = dir.as_ref();
        let direct = dir.join(MANIFEST_FILE).is_file();
        let mut found = Vec::new();
        find_runs(dir, &mut found)?;
        for run in found {
            match score_run(&run)? {
                Some(score) => runs.push(score),
                None if direct => {
                    return Err(Error::Config(format!("{} has not finished training", run.display())));
                }
                None => skipped.push(run),
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::Config("no finished runs to report".into()));
    }

    let mut keys: Vec<(String, String)> = runs.iter().map(|r| (r.env.clone(), r.algorithm.clone())).collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|(env, algorithm)| {
            let group: Vec<&RunScore> = runs.iter().filter(|r| r.env == env && r.algorithm == algorithm).collect();
            let (final_mean, final_std) = mean_std(&group.iter().map(|r| r.final_iqm).collect::<Vec<_>>());
            let (best_mean, best_std) = mean_std(&group.iter().map(|r| r.best_iqm).collect::<Vec<_>>());
            let (return_mean, _) = mean_std(&group.iter().map(|r| r.final_return_mean).collect::<Vec<_>>());
            ReportRow {
                algorithm,
                env,
                runs: group.len(),
                final_mean,
                final_std,
                best_mean,
                best_std,
                return_mean,
            }
        })
        .collect();
    Ok(Report { runs, rows, skipped })
}
