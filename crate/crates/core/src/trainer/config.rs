use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EpisodeEnd;
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::improve::{PolicyMode, RosmoConfig, ADVANTAGE_CLIP, DEFAULT_DISCOUNT};
use crate::math::AdamWConfig;
use crate::mcts::SearchConfig;
use crate::model::Architecture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// One-step improvement plus the advantage-filtered behavior regularizer.
    Rosmo,
    /// One-step improvement with no regularizer.
    Onestep,
    /// Only advantage-filtered regression onto dataset actions.
    Behavior,
    /// MCTS visit-count targets and search-based acting.
    Mzu,
    /// Maximum-likelihood cloning of the dataset policy.
    Bc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Rosmo,
        Algorithm::Onestep,
        Algorithm::Behavior,
        Algorithm::Mzu,
        Algorithm::Bc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rosmo => "rosmo",
            Algorithm::Onestep => "onestep",
            Algorithm::Behavior => "behavior",
            Algorithm::Mzu => "mzu",
            Algorithm::Bc => "bc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Every knob of a training run. Serialized verbatim into the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub unroll: usize,
    pub td_steps: usize,
    pub discount: f64,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    /// Multiplier applied once `lr_decay_fraction` of the updates are done.
    pub lr_decay_rate: f32,
    pub lr_decay_fraction: f64,
    pub max_grad_norm: f32,
    pub target_update_interval: u64,
    pub policy_coef: f32,
    pub value_coef: f32,
    pub reward_coef: f32,
    /// Behavior-regularizer strength.
    pub alpha: f32,
    pub total_updates: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub episode_end: EpisodeEnd,
    /// Gradient multiplier at the dynamics input.
    pub gradient_scale: f32,
    /// Share of dataset episodes kept for training.
    pub fraction: f64,
    /// Dynamics hidden width.
    pub capacity: usize,
    pub policy_mode: PolicyMode,
    pub temperature: f64,
    pub search: SearchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Rosmo,
            env: EnvId::Catch,
            unroll: 5,
            td_steps: 3,
            discount: DEFAULT_DISCOUNT,
            batch_size: 128,
            learning_rate: 7e-4,
            weight_decay: 1e-4,
            lr_decay_rate: 0.1,
            lr_decay_fraction: 0.8,
            max_grad_norm: 5.0,
            target_update_interval: 200,
            policy_coef: 1.0,
            value_coef: 0.25,
            reward_coef: 1.0,
            alpha: 0.2,
            total_updates: 50_000,
            seed: 0,
            eval_interval: 1000,
            eval_episodes: 32,
            episode_end: EpisodeEnd::Absorbing,
            gradient_scale: 0.5,
            fraction: 1.0,
            capacity: 256,
            policy_mode: PolicyMode::Exact,
            temperature: 1.0,
            search: SearchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, env: EnvId) -> Self {
        TrainConfig {
            algorithm,
            env,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} (got {self:?})")));
        if self.unroll == 0 || self.td_steps == 0 {
            return bad("unroll and td_steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        let coefs = [
            self.policy_coef,
            self.value_coef,
            self.reward_coef,
            self.alpha,
            self.weight_decay,
            self.max_grad_norm,
        ];
        if coefs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("coefficients must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay_rate > 0.0) {
            return bad("learning rate and decay rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_decay_fraction) {
            return bad("lr_decay_fraction must lie in [0, 1]");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("fraction must lie in (0, 1]");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be at least 1");
        }
        if let PolicyMode::Sampled { samples: 0 } = self.policy_mode {
            return bad("sampled mode needs at least one sample");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        self.architecture().validate()?;
        self.search_config().validate()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::for_env(self.env).with_capacity(self.capacity)
    }

    pub fn rosmo_config(&self) -> RosmoConfig {
        RosmoConfig {
            discount: self.discount,
            mode: self.policy_mode,
            temperature: self.temperature,
            advantage_clip: ADVANTAGE_CLIP,
        }
    }

    /// The search settings with the run's discount.
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            discount: self.discount,
            ..self.search
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Regularizer strength actually used; only ROSMO regularizes.
    pub fn effective_alpha(&self) -> f32 {
        match self.algorithm {
            Algorithm::Rosmo => self.alpha,
            _ => 0.0,
        }
    }

    /// Step-decayed learning rate for update number `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f32 {
        let boundary = (self.lr_decay_fraction * self.total_updates as f64).floor() as u64;
        if step >= boundary {
            self.learning_rate * self.lr_decay_rate
        } else {
            self.learning_rate
        }
    }
}
