//! Catch, cartpole and mountain_car with deterministic seeding, plus an
//! action-noise wrapper for collecting data from stochastic dynamics.

mod cartpole;
mod catch;
mod mountain_car;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cartpole::Cartpole;
pub use catch::Catch;
pub use mountain_car::MountainCar;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Catch,
    Cartpole,
    MountainCar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub observation_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::Catch, EnvId::Cartpole, EnvId::MountainCar];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Catch => "catch",
            EnvId::Cartpole => "cartpole",
            EnvId::MountainCar => "mountain_car",
        }
    }

    pub fn spec(self) -> EnvSpec {
        let (observation_dim, max_episode_steps) = match self {
            EnvId::Catch => (catch::ROWS * catch::COLUMNS, catch::ROWS - 1),
            EnvId::Cartpole => (6, cartpole::MAX_STEPS),
            EnvId::MountainCar => (3, mountain_car::MAX_STEPS),
        };
        EnvSpec {
            env_id: self,
            observation_dim,
            action_count: 3,
            max_episode_steps,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catch" => Ok(EnvId::Catch),
            "cartpole" => Ok(EnvId::Cartpole),
            "mountain_car" => Ok(EnvId::MountainCar),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f32>,
    pub reward: f32,
    /// The episode is over, either by reaching a terminal state or the step cap.
    pub terminal: bool,
    /// The episode ended only because the step cap was hit.
    pub truncated: bool,
    pub step_index: usize,
}

#[derive(Clone, Debug)]
pub enum Env {
    Catch(Catch),
    Cartpole(Cartpole),
    MountainCar(MountainCar),
}

impl Env {
    pub fn new(id: EnvId) -> Self {
        match id {
            EnvId::Catch => Env::Catch(Catch::new()),
            EnvId::Cartpole => Env::Cartpole(Cartpole::new()),
            EnvId::MountainCar => Env::MountainCar(MountainCar::new()),
        }
    }

    pub fn id(&self) -> EnvId {
        match self {
            Env::Catch(_) => EnvId::Catch,
            Env::Cartpole(_) => EnvId::Cartpole,
            Env::MountainCar(_) => EnvId::MountainCar,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.id().spec()
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        match self {
            Env::Catch(e) => e.reset(seed),
            Env::Cartpole(e) => e.reset(seed),
            Env::MountainCar(e) => e.reset(seed),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        match self {
            Env::Catch(e) => e.step(action),
            Env::Cartpole(e) => e.step(action),
            Env::MountainCar(e) => e.step(action),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub epsilon: f32,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(epsilon: f32, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("noise epsilon {epsilon} outside [0, 1]")));
        }
        Ok(NoiseConfig { epsilon, seed })
    }

    pub fn none() -> Self {
        NoiseConfig {
            epsilon: 0.0,
            seed: 0,
        }
    }
}

/// Replaces the agent's action with a uniform one with probability epsilon.
#[derive(Clone, Debug)]
pub struct ActionNoise {
    epsilon: f32,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyStep {
    pub result: StepResult,
    /// The action the environment actually executed; this is what gets logged.
    pub executed: usize,
    pub replaced: bool,
}

impl ActionNoise {
    pub fn new(cfg: NoiseConfig) -> Self {
        ActionNoise {
            epsilon: cfg.epsilon,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    /// Returns the action to execute and whether it was replaced.
    pub fn perturb(&mut self, action: usize, action_count: usize) -> (usize, bool) {
        if self.epsilon > 0.0 && self.rng.gen::<f32>() < self.epsilon {
            (self.rng.gen_range(0..action_count), true)
        } else {
            (action, false)
        }
    }
}

pub fn noisy_step(env: &mut Env, action: usize, noise: &mut ActionNoise) -> Result<NoisyStep> {
    let count = env.spec().action_count;
    if action >= count {
        return Err(Error::InvalidAction { action, count });
    }
    let (executed, replaced) = noise.perturb(action, count);
    let result = env.step(executed)?;
    Ok(NoisyStep {
        result,
        executed,
        replaced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_match_table() {
        let s = EnvId::Catch.spec();
        assert_eq!((s.observation_dim, s.action_count, s.max_episode_steps), (50, 3, 9));
        let s = EnvId::Cartpole.spec();
        assert_eq!((s.observation_dim, s.action_count, s.max_episode_steps), (6, 3, 1000));
        let s = EnvId::MountainCar.spec();
        assert_eq!((s.observation_dim, s.action_count, s.max_episode_steps), (3, 3, 1000));
    }

    #[test]
    fn parse_ids() {
        for id in EnvId::ALL {
            assert_eq!(id.as_str().parse::<EnvId>().unwrap(), id);
        }
        assert!(matches!("pong".parse::<EnvId>(), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn same_seed_same_observation() {
        for id in EnvId::ALL {
            let mut a = Env::new(id);
            let mut b = Env::new(id);
            assert_eq!(a.reset(42), b.reset(42));
        }
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = Env::new(EnvId::Catch);
        env.reset(0);
        assert!(matches!(env.step(3), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn zero_noise_is_plain_step() {
        for seed in 0..5 {
            let mut a = Env::new(EnvId::Cartpole);
            let mut b = Env::new(EnvId::Cartpole);
            a.reset(seed);
            b.reset(seed);
            let mut noise = ActionNoise::new(NoiseConfig { epsilon: 0.0, seed });
            for t in 0..20 {
                let action = (t * 7 + seed as usize) % 3;
                let plain = a.step(action).unwrap();
                let noisy = noisy_step(&mut b, action, &mut noise).unwrap();
                assert_eq!(noisy.executed, action);
                assert_eq!(noisy.result, plain);
                if plain.terminal {
                    break;
                }
            }
        }
    }

    #[test]
    fn noise_config_bounds() {
        assert!(NoiseConfig::new(1.5, 0).is_err());
        assert!(NoiseConfig::new(0.3, 0).is_ok());
    }
}
