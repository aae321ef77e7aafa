use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Algorithm, TrainConfig};
use super::losses::{behavior_cloning_loss, compute_losses, unroll, unroll_inputs, LossReport, LossWeights};
use crate::data::Segment;
use crate::error::{Error, Result};
use crate::improve::{improve_batch, ImprovementTargets};
use crate::math::{clip_by_global_norm, OptimizerState, ParamSet, Tape, Tensor};
use crate::mcts::mcts_targets_batch;
use crate::model::{update_target, NetworkWeights, TargetNetwork};

const TARGET_PREFIX: &str = "target/";
const FIRST_MOMENT_PREFIX: &str = "opt/m/";
const SECOND_MOMENT_PREFIX: &str = "opt/v/";
const META_STEP: &str = "meta/step";
const META_SYNCED: &str = "meta/target_synced";

/// Everything the learner mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub online: NetworkWeights,
    pub target: TargetNetwork,
    pub optimizer: OptimizerState,
    /// Updates applied so far.
    pub step: u64,
}

/// Randomness for update `step`: a ChaCha stream per step keyed by the seed,
/// so any update can be replayed without the ones before it.
pub fn update_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let online = NetworkWeights::new(config.architecture(), &mut init_rng(config.seed))?;
        Ok(TrainState {
            target: TargetNetwork::new(&online),
            optimizer: OptimizerState::new(online.params(), config.optimizer()),
            online,
            step: 0,
        })
    }

    /// Flattens the state into one archive: online tensors under their own
    /// names, then the target copy, the optimizer moments and counters.
    pub fn to_params(&self) -> ParamSet {
        let mut out = self.online.params().clone();
        let names = self.online.params().names();
        for (name, t) in self.target.weights.params().iter() {
            out.push(format!("{TARGET_PREFIX}{name}"), t.clone());
        }
        for (name, t) in names.iter().zip(self.optimizer.first_moments()) {
            out.push(format!("{FIRST_MOMENT_PREFIX}{name}"), t.clone());
        }
        for (name, t) in names.iter().zip(self.optimizer.second_moments()) {
            out.push(format!("{SECOND_MOMENT_PREFIX}{name}"), t.clone());
        }
        out.push(META_STEP, encode_counter(self.step));
        out.push(META_SYNCED, encode_counter(self.target.synced_at));
        out
    }

    pub fn from_params(config: &TrainConfig, archive: &ParamSet) -> Result<Self> {
        let arch = config.architecture();
        let online = online_weights(config, archive)?;
        let names = online.params().names().to_vec();
        let take = |prefix: &str| -> Result<Vec<Tensor>> {
            names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}{n}");
                    archive.get(&key).cloned().ok_or(Error::MissingTensor(key))
                })
                .collect()
        };
        let mut target_params = ParamSet::new();
        for (n, t) in names.iter().zip(take(TARGET_PREFIX)?) {
            target_params.push(n.clone(), t);
        }
        let counter = |key: &str| {
            archive
                .get(key)
                .ok_or_else(|| Error::MissingTensor(key.into()))
                .and_then(decode_counter)
        };
        let step = counter(META_STEP)?;
        Ok(TrainState {
            target: TargetNetwork {
                weights: NetworkWeights::from_params(arch, target_params)?,
                synced_at: counter(META_SYNCED)?,
            },
            optimizer: OptimizerState::from_parts(
                config.optimizer(),
                take(FIRST_MOMENT_PREFIX)?,
                take(SECOND_MOMENT_PREFIX)?,
                step,
            ),
            online,
            step,
        })
    }
}

/// The online network out of an archive written by [`TrainState::to_params`]
/// (or a bare parameter set).
pub fn online_weights(config: &TrainConfig, archive: &ParamSet) -> Result<NetworkWeights> {
    let mut params = ParamSet::new();
    for (name, t) in archive.iter() {
        if !(name.starts_with(TARGET_PREFIX) || name.starts_with("opt/") || name.starts_with("meta/")) {
            params.push(name, t.clone());
        }
    }
    NetworkWeights::from_params(config.architecture(), params)
}

/// A u64 as four 16-bit limbs, each exactly representable in f32.
fn encode_counter(value: u64) -> Tensor {
    Tensor::vector((0..4).map(|i| ((value >> (16 * i)) & 0xffff) as f32).collect())
}

fn decode_counter(t: &Tensor) -> Result<u64> {
    if t.numel() != 4 || t.data().iter().any(|&x| !(0.0..65536.0).contains(&x) || x.fract() != 0.0) {
        return Err(Error::Corrupt("malformed step counter".into()));
    }
    Ok(t.data().iter().enumerate().map(|(i, &x)| (x as u64) << (16 * i)).sum())
}

/// Improvement targets for `segments` from the configured operator, always
/// computed with the target network.
pub fn build_targets(
    config: &TrainConfig,
    target: &NetworkWeights,
    segments: &[Segment],
    rng: &mut impl Rng,
) -> Result<Vec<ImprovementTargets>> {
    match config.algorithm {
        Algorithm::Rosmo | Algorithm::Onestep | Algorithm::Behavior => improve_batch(
            target,
            segments,
            config.unroll,
            config.td_steps,
            &config.rosmo_config(),
            rng,
        ),
        Algorithm::Mzu => mcts_targets_batch(target, segments, config.unroll, config.td_steps, &config.search_config()),
        Algorithm::Bc => Err(Error::Config("behavior cloning builds no improvement targets".into())),
    }
}

pub fn loss_weights(config: &TrainConfig) -> LossWeights {
    match config.algorithm {
        // The filtered regression takes the policy slot's weight and the
        // one-step cross-entropy is still reported but not optimized.
        Algorithm::Behavior => LossWeights {
            reward: config.reward_coef,
            value: config.value_coef,
            policy: 0.0,
            regularizer: config.policy_coef,
        },
        _ => LossWeights {
            reward: config.reward_coef,
            value: config.value_coef,
            policy: config.policy_coef,
            regularizer: config.effective_alpha(),
        },
    }
}

fn apply_gradients(
    state: &mut TrainState,
    config: &TrainConfig,
    grads: Vec<Tensor>,
    trainable: Option<&[bool]>,
) -> f64 {
    let (grads, norm) = clip_by_global_norm(grads, config.max_grad_norm);
    let lr = config.learning_rate_at(state.step);
    state
        .optimizer
        .update_with(state.online.params_mut(), &grads, lr, trainable);
    state.step += 1;
    update_target(&state.online, &mut state.target, state.step, config.target_update_interval);
    norm as f64
}

/// One learner update on `segments` for the model-based algorithms.
pub fn train_step(
    state: &mut TrainState,
    segments: &[Segment],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    if segments.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if config.algorithm == Algorithm::Bc {
        return bc_step(state, segments, config);
    }
    let targets = build_targets(config, &state.target.weights, segments, rng)?;
    let tape = Tape::new();
    let net = state.online.bind(&tape);
    let (obs, actions) = unroll_inputs(segments, config.unroll)?;
    let unrolled = unroll(&net, tape.constant(obs), &actions, config.gradient_scale);
    let (loss, mut report) = compute_losses(
        &tape,
        &unrolled,
        &targets,
        segments,
        state.online.support(),
        loss_weights(config),
    )?;
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = net.vars().iter().map(|v| grads.wrt(*v)).collect();
    drop(net);
    report.grad_norm = apply_gradients(state, config, grads, None);
    Ok(report)
}

/// One behavior-cloning update; dynamics weights are left untouched.
pub fn bc_step(state: &mut TrainState, segments: &[Segment], config: &TrainConfig) -> Result<LossReport> {
    let tape = Tape::new();
    let net = state.online.bind(&tape);
    let (loss, value) = behavior_cloning_loss(&tape, &net, segments)?;
    let grads = tape.backward(loss.scale(config.policy_coef))?;
    let grads: Vec<Tensor> = net.vars().iter().map(|v| grads.wrt(*v)).collect();
    drop(net);
    let trainable = state.online.mask(|name| !name.starts_with("dyn/"));
    let grad_norm = apply_gradients(state, config, grads, Some(&trainable));
    Ok(LossReport {
        policy: value,
        total: config.policy_coef as f64 * value,
        grad_norm,
        ..LossReport::default()
    })
}
