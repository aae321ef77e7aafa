use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Trajectory};
use crate::error::{Error, Result};

/// How windows that run past the end of an episode are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    /// Only start indices whose whole window lies inside the episode,
    /// `t ∈ [0, T − K − n − 1]`; shorter episodes are never drawn.
    Exclude,
    /// Any start index `t ∈ [0, T − 1]`; steps past the end are an absorbing
    /// state with zero observation, zero reward and a uniformly random action.
    Absorbing,
}

/// A window `o_t..o_{t+K+n}`, `a_t..a_{t+K+n−1}`, `r_t..r_{t+K+n−1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub trajectory: usize,
    pub start: usize,
    obs_dim: usize,
    observations: Vec<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    /// Number of leading window steps that are real episode steps.
    pub valid: usize,
}

impl Segment {
    /// Number of observations, `K + n + 1`.
    pub fn len(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// True when window step `i` lies inside the recorded episode.
    pub fn in_episode(&self, i: usize) -> bool {
        i < self.valid
    }

    /// Cuts a window starting at `start` from `tr`, padding past the end.
    pub fn cut(
        tr: &Trajectory,
        index: usize,
        start: usize,
        span: usize,
        action_count: usize,
        rng: &mut impl Rng,
    ) -> Segment {
        let obs_dim = tr.obs_dim();
        let mut observations = Vec::with_capacity((span + 1) * obs_dim);
        let mut actions = Vec::with_capacity(span);
        let mut rewards = Vec::with_capacity(span);
        for i in 0..=span {
            let t = start + i;
            if t < tr.len() {
                observations.extend_from_slice(tr.observation(t));
            } else {
                observations.extend(std::iter::repeat(0.0).take(obs_dim));
            }
            if i < span {
                if t < tr.len() {
                    actions.push(tr.action(t));
                    rewards.push(tr.reward(t));
                } else {
                    actions.push(rng.gen_range(0..action_count));
                    rewards.push(0.0);
                }
            }
        }
        Segment {
            trajectory: index,
            start,
            obs_dim,
            observations,
            actions,
            rewards,
            valid: tr.len().saturating_sub(start).min(span + 1),
        }
    }
}

/// Draws segments for unroll length `K` and TD steps `n`.
#[derive(Clone, Debug)]
pub struct SegmentSampler<'a> {
    dataset: &'a Dataset,
    unroll: usize,
    td_steps: usize,
    mode: EpisodeEnd,
    eligible: Vec<usize>,
}

impl<'a> SegmentSampler<'a> {
    pub fn new(dataset: &'a Dataset, unroll: usize, td_steps: usize, mode: EpisodeEnd) -> Result<Self> {
        if unroll < 1 || td_steps < 1 {
            return Err(Error::Config(format!(
                "unroll ({unroll}) and TD steps ({td_steps}) must be at least 1"
            )));
        }
        let min_len = match mode {
            EpisodeEnd::Exclude => unroll + td_steps + 1,
            EpisodeEnd::Absorbing => 1,
        };
        let eligible: Vec<usize> = dataset
            .trajectories
            .iter()
            .enumerate()
            .filter(|(_, tr)| tr.len() >= min_len)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::NoEligibleTrajectory {
                k: unroll,
                n: td_steps,
            });
        }
        Ok(SegmentSampler {
            dataset,
            unroll,
            td_steps,
            mode,
            eligible,
        })
    }

    pub fn span(&self) -> usize {
        self.unroll + self.td_steps
    }

    /// Inclusive upper bound on the start index for a trajectory of length `len`.
    pub fn max_start(&self, len: usize) -> usize {
        match self.mode {
            EpisodeEnd::Exclude => len - self.span() - 1,
            EpisodeEnd::Absorbing => len - 1,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Segment {
        let index = self.eligible[rng.gen_range(0..self.eligible.len())];
        let tr = &self.dataset.trajectories[index];
        let start = rng.gen_range(0..=self.max_start(tr.len()));
        Segment::cut(tr, index, start, self.span(), self.dataset.action_count(), rng)
    }

    pub fn sample_batch(&self, batch: usize, rng: &mut impl Rng) -> Vec<Segment> {
        (0..batch).map(|_| self.sample(rng)).collect()
    }
}

/// Draws one segment with every window step inside its episode.
pub fn sample_segment(dataset: &Dataset, unroll: usize, td_steps: usize, rng: &mut impl Rng) -> Result<Segment> {
    Ok(SegmentSampler::new(dataset, unroll, td_steps, EpisodeEnd::Exclude)?.sample(rng))
}
