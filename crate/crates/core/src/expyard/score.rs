use crate::envs::EnvId;
use crate::error::{Error, Result};

/// Returns of a uniformly random policy and of the data-collecting online agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreAnchors {
    pub random: f64,
    pub online: f64,
}

impl ScoreAnchors {
    pub fn for_env(env: EnvId) -> Self {
        let (random, online) = match env {
            EnvId::Cartpole => (64.83, 1001.0),
            EnvId::Catch => (-0.66, 1.0),
            EnvId::MountainCar => (-1000.0, -102.16),
        };
        ScoreAnchors { random, online }
    }
}

/// `(score − random) / (online − random)`; may leave `[0, 1]`.
pub fn normalized_score(env: EnvId, raw_return: f64) -> f64 {
    let a = ScoreAnchors::for_env(env);
    (raw_return - a.random) / (a.online - a.random)
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interquartile mean: the mean of values inside the closed band between the
/// 25th and 75th percentiles. Fewer than four values give the plain mean.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("interquartile mean of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interquartile mean input".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    if values.len() < 4 {
        return Ok(mean(values));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.25), percentile(&sorted, 0.75));
    let band: Vec<f64> = sorted.into_iter().filter(|&v| v >= lo && v <= hi).collect();
    Ok(mean(&band))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
