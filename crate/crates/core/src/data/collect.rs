//! Online DQN agent whose whole training history is recorded as a dataset.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Trajectory};
use crate::envs::{noisy_step, ActionNoise, Env, EnvId, NoiseConfig};
use crate::error::{Error, Result};
use crate::math::{Activation, AdamWConfig, Mlp, OptimizerState, ParamSet, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_interval: usize,
    pub discount: f32,
    pub learning_rate: f32,
    pub epsilon_start: f32,
    pub epsilon_end: f32,
    /// Fraction of the episodes over which exploration is annealed.
    pub anneal_fraction: f32,
    /// Transitions stored before learning starts.
    pub warmup: usize,
    /// Per-feature multiplier applied to observations before the Q-network;
    /// `None` uses [`default_input_scale`].
    pub input_scale: Option<Vec<f32>>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![64, 64],
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync_interval: 100,
            discount: 0.99,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            anneal_fraction: 0.25,
            warmup: 32,
            input_scale: None,
        }
    }
}

/// Episode count recorded by default for each task.
pub fn default_episodes(env: EnvId) -> usize {
    match env {
        EnvId::Catch => 2000,
        EnvId::Cartpole => 1000,
        EnvId::MountainCar => 500,
    }
}

/// Mountain car velocities are two orders of magnitude smaller than
/// positions, which leaves the Q-network nearly blind to them unless rescaled.
pub fn default_input_scale(env: EnvId) -> Vec<f32> {
    match env {
        EnvId::MountainCar => vec![1.0, 1.0 / 0.07, 1.0],
        _ => vec![1.0; env.spec().observation_dim],
    }
}

struct Transition {
    observation: Vec<f32>,
    action: usize,
    reward: f32,
    next_observation: Vec<f32>,
    /// False when the next state is terminal, so no bootstrap is taken.
    bootstrap: bool,
}

struct QNetwork {
    params: ParamSet,
    mlp: Mlp,
    scale: Vec<f32>,
}

impl QNetwork {
    fn new(scale: Vec<f32>, actions: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mut sizes = hidden.to_vec();
        sizes.push(actions);
        let mlp = Mlp::new(&mut params, "q", scale.len(), &sizes, Activation::Relu, false, rng);
        QNetwork { params, mlp, scale }
    }

    fn inputs(&self, observations: Tensor) -> Tensor {
        let width = self.scale.len();
        let data = observations
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * self.scale[i % width])
            .collect();
        Tensor::from_parts(observations.shape().to_vec(), data)
    }

    fn values(&self, params: &ParamSet, observations: Tensor) -> Tensor {
        let tape = Tape::new();
        let vars = params.bind(&tape);
        self.mlp.forward(&vars, tape.constant(self.inputs(observations))).value()
    }

    fn greedy(&self, observation: &[f32]) -> usize {
        let q = self.values(&self.params, Tensor::vector(observation.to_vec()).reshape([1, observation.len()]).unwrap());
        argmax(q.data())
    }
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains an epsilon-greedy DQN online and records every episode it plays.
pub fn collect_dqn(env: EnvId, episodes: usize, noise: NoiseConfig, seed: u64) -> Result<Dataset> {
    collect_dqn_with(env, episodes, noise, seed, &DqnConfig::default())
}

pub fn collect_dqn_with(
    env_id: EnvId,
    episodes: usize,
    noise: NoiseConfig,
    seed: u64,
    config: &DqnConfig,
) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::Config("collection needs at least one episode".into()));
    }
    let spec = env_id.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = config.input_scale.clone().unwrap_or_else(|| default_input_scale(env_id));
    if scale.len() != spec.observation_dim {
        return Err(Error::ObservationDim {
            expected: spec.observation_dim,
            actual: scale.len(),
        });
    }
    let mut online = QNetwork::new(scale, spec.action_count, &config.hidden, &mut rng);
    let mut target = online.params.clone();
    let mut optimizer = OptimizerState::new(
        &online.params,
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    let mut replay: VecDeque<Transition> = VecDeque::with_capacity(config.replay_capacity);
    let mut env = Env::new(env_id);
    let mut action_noise = ActionNoise::new(noise);
    let mut dataset = Dataset::new(env_id, noise.epsilon, seed);
    let anneal_episodes = (config.anneal_fraction * episodes as f32).max(1.0);
    let mut updates = 0usize;

    for episode in 0..episodes {
        let progress = (episode as f32 / anneal_episodes).min(1.0);
        let epsilon = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * progress;
        let mut trajectory = Trajectory::new(spec.observation_dim);
        let mut observation = env.reset(seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)).observation;
        loop {
            let action = if rng.gen::<f32>() < epsilon {
                rng.gen_range(0..spec.action_count)
            } else {
                online.greedy(&observation)
            };
            let step = noisy_step(&mut env, action, &mut action_noise)?;
            let result = step.result;
            trajectory.push(&observation, step.executed, result.reward);
            if replay.len() == config.replay_capacity {
                replay.pop_front();
            }
            replay.push_back(Transition {
                observation: std::mem::take(&mut observation),
                action: step.executed,
                reward: result.reward,
                next_observation: result.observation.clone(),
                bootstrap: !result.terminal || result.truncated,
            });
            observation = result.observation;

            if replay.len() >= config.warmup.max(config.batch_size) {
                learn(&mut online, &target, &mut optimizer, &replay, config, &mut rng);
                updates += 1;
                if updates % config.target_sync_interval == 0 {
                    target = online.params.clone();
                }
            }
            if result.terminal {
                break;
            }
        }
        dataset.trajectories.push(trajectory);
    }
    Ok(dataset)
}

fn learn(
    online: &mut QNetwork,
    target: &ParamSet,
    optimizer: &mut OptimizerState,
    replay: &VecDeque<Transition>,
    config: &DqnConfig,
    rng: &mut impl Rng,
) {
    let obs_dim = replay[0].observation.len();
    let batch: Vec<&Transition> = (0..config.batch_size)
        .map(|_| &replay[rng.gen_range(0..replay.len())])
        .collect();
    let stack = |f: &dyn Fn(&Transition) -> &[f32]| {
        let rows: Vec<&[f32]> = batch.iter().map(|t| f(t)).collect();
        Tensor::stack_rows(&rows, obs_dim).expect("replay rows share a width")
    };
    let next_q = online.values(target, stack(&|t| &t.next_observation));
    let targets: Vec<f32> = batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let best = next_q.row(i).iter().copied().fold(f32::NEG_INFINITY, f32::max);
            t.reward + if t.bootstrap { config.discount * best } else { 0.0 }
        })
        .collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();

    let tape = Tape::new();
    let vars = online.params.bind(&tape);
    let q = online.mlp.forward(&vars, tape.constant(online.inputs(stack(&|t| &t.observation))));
    let mask = tape.constant(Tensor::one_hot(&actions, online.mlp.outputs()));
    let chosen = (q * mask).sum_last_axis();
    let error = chosen - tape.constant(Tensor::from_parts(vec![targets.len(), 1], targets));
    let loss = (error * error).mean();
    let grads = tape.backward(loss).expect("scalar loss");
    let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    optimizer.update(&mut online.params, &grads);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode() {
        let ds = collect_dqn(EnvId::Catch, 1, NoiseConfig::none(), 0).unwrap();
        assert_eq!(ds.episodes(), 1);
        assert_eq!(ds.transitions(), 9);
    }

    #[test]
    fn zero_episodes_is_rejected() {
        assert!(collect_dqn(EnvId::Catch, 0, NoiseConfig::none(), 0).is_err());
    }

    #[test]
    fn collection_is_seeded() {
        let a = collect_dqn(EnvId::Catch, 30, NoiseConfig::none(), 5).unwrap();
        let b = collect_dqn(EnvId::Catch, 30, NoiseConfig::none(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mountain_car_episode_is_complete() {
        let ds = collect_dqn(EnvId::MountainCar, 1, NoiseConfig::none(), 1).unwrap();
        let tr = &ds.trajectories[0];
        assert_eq!(tr.episode_return(), -(tr.len() as f64));
    }
}
