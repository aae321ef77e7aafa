use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::math::checkpoint::Reader;

pub const DATASET_VERSION: &str = "rosmo-ds-v1";

/// One recorded episode. `rewards[t]` is the reward received after
/// `actions[t]` was executed in the state observed as `observation(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    obs_dim: usize,
    observations: Vec<f32>,
    actions: Vec<u8>,
    rewards: Vec<f32>,
}

impl Trajectory {
    pub fn new(obs_dim: usize) -> Self {
        Trajectory {
            obs_dim,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, observation: &[f32], action: usize, reward: f32) {
        assert_eq!(observation.len(), self.obs_dim);
        assert!(action <= u8::MAX as usize);
        self.observations.extend_from_slice(observation);
        self.actions.push(action as u8);
        self.rewards.push(reward);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn observation(&self, t: usize) -> &[f32] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> usize {
        self.actions[t] as usize
    }

    pub fn reward(&self, t: usize) -> f32 {
        self.rewards[t]
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env: EnvId,
    /// Action-noise probability used while collecting.
    pub epsilon: f32,
    /// Collector seed.
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    env_id: EnvId,
    obs_dim: usize,
    action_count: usize,
    epsilon: f32,
    episodes: usize,
    transitions: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(env: EnvId, epsilon: f32, seed: u64) -> Self {
        Dataset {
            env,
            epsilon,
            seed,
            trajectories: Vec::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.env.spec().observation_dim
    }

    pub fn action_count(&self) -> usize {
        self.env.spec().action_count
    }

    pub fn episodes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn average_return(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        let total: f64 = self.trajectories.iter().map(Trajectory::episode_return).sum();
        total / self.trajectories.len() as f64
    }

    /// Keeps `ceil(fraction · episodes)` whole episodes drawn without
    /// replacement. Smaller fractions under the same seed select a prefix of
    /// the same permutation, so their episode sets are nested.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        let n = self.trajectories.len();
        let keep = ((fraction * n as f64).ceil() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        Ok(Dataset {
            env: self.env,
            epsilon: self.epsilon,
            seed: self.seed,
            trajectories: chosen.iter().map(|&i| self.trajectories[i].clone()).collect(),
        })
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.transitions() * (self.obs_dim() * 4 + 5) + 4 * self.episodes());
        for tr in &self.trajectories {
            out.extend_from_slice(&(tr.len() as u32).to_le_bytes());
            for &x in &tr.observations {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&tr.actions);
            for &r in &tr.rewards {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
        out
    }

    /// CRC32 of the episode payload; identifies the dataset content.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: DATASET_VERSION.to_string(),
            env_id: self.env,
            obs_dim: self.obs_dim(),
            action_count: self.action_count(),
            epsilon: self.epsilon,
            episodes: self.episodes(),
            transitions: self.transitions(),
            seed: self.seed,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        let payload = self.payload();
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Corrupt("missing dataset header line".into()))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Corrupt(format!("unreadable dataset header: {e}")))?;
        let found = raw.get("version").and_then(|v| v.as_str()).unwrap_or("<none>");
        if found != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION.into(),
                found: found.to_string(),
            });
        }
        let header: Header = serde_json::from_value(raw)?;
        let spec = header.env_id.spec();
        if header.obs_dim != spec.observation_dim || header.action_count != spec.action_count {
            return Err(Error::Corrupt(format!(
                "header dimensions ({}, {}) do not match {}",
                header.obs_dim, header.action_count, header.env_id
            )));
        }

        let rest = &bytes[newline + 1..];
        if rest.len() < 4 {
            return Err(Error::Corrupt("dataset truncated before checksum".into()));
        }
        let (payload, crc) = rest.split_at(rest.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let mut ds = Dataset::new(header.env_id, header.epsilon, header.seed);
        for _ in 0..header.episodes {
            let t = r.u32()? as usize;
            let mut tr = Trajectory::new(header.obs_dim);
            tr.observations = r
                .take(t * header.obs_dim * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tr.actions = r.take(t)?.to_vec();
            if let Some(&bad) = tr.actions.iter().find(|&&a| a as usize >= header.action_count) {
                return Err(Error::Corrupt(format!("action {bad} out of range")));
            }
            tr.rewards = r
                .take(t * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ds.trajectories.push(tr);
        }
        if r.pos != payload.len() {
            return Err(Error::Corrupt("trailing bytes after last episode".into()));
        }
        if ds.transitions() != header.transitions {
            return Err(Error::Corrupt(format!(
                "header claims {} transitions, found {}",
                header.transitions,
                ds.transitions()
            )));
        }
        Ok(ds)
    }
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

/// Loads a dataset and refuses it when it was collected on another task.
pub fn load_dataset_for(path: impl AsRef<Path>, expected: EnvId) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    if ds.env != expected {
        return Err(Error::EnvMismatch {
            expected: expected.to_string(),
            found: ds.env.to_string(),
        });
    }
    Ok(ds)
}
