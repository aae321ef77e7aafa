use super::config::Algorithm;
use crate::data::argmax;
use crate::envs::{Env, EnvId};
use crate::error::Result;
use crate::math::Tensor;
use crate::mcts::{mzu_act_batch, SearchConfig};
use crate::model::NetworkWeights;

/// Evaluation episodes always start from the same reset seeds, so scores of
/// different runs are comparable episode by episode.
pub const EVAL_SEED_BASE: u64 = 0x00E7_A100_0000;

/// Greedy actions for a batch of observations: policy-head argmax, or the most
/// visited root action for search-based agents.
pub fn greedy_actions(
    weights: &NetworkWeights,
    algorithm: Algorithm,
    search: &SearchConfig,
    observations: &Tensor,
) -> Result<Vec<usize>> {
    if algorithm == Algorithm::Mzu {
        return mzu_act_batch(weights, observations, search);
    }
    let (logits, _) = weights.predict_batch(&weights.represent_batch(observations)?);
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}

/// Undiscounted returns of `episodes` greedy episodes, all stepped in lockstep.
pub fn evaluate(
    weights: &NetworkWeights,
    algorithm: Algorithm,
    search: &SearchConfig,
    env: EnvId,
    episodes: usize,
) -> Result<Vec<f64>> {
    let width = env.spec().observation_dim;
    let mut envs: Vec<Env> = (0..episodes).map(|_| Env::new(env)).collect();
    let mut observations: Vec<Vec<f32>> = envs
        .iter_mut()
        .enumerate()
        .map(|(i, e)| e.reset(EVAL_SEED_BASE + i as u64).observation)
        .collect();
    let mut returns = vec![0.0; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    while !active.is_empty() {
        let rows: Vec<&[f32]> = active.iter().map(|&i| observations[i].as_slice()).collect();
        let actions = greedy_actions(weights, algorithm, search, &Tensor::stack_rows(&rows, width)?)?;
        let mut still = Vec::with_capacity(active.len());
        for (&i, &a) in active.iter().zip(&actions) {
            let step = envs[i].step(a)?;
            returns[i] += step.reward as f64;
            if !step.terminal {
                observations[i] = step.observation;
                still.push(i);
            }
        }
        active = still;
    }
    Ok(returns)
}
