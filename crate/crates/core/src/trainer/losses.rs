use serde::{Deserialize, Serialize};

use crate::data::Segment;
use crate::error::{Error, Result};
use crate::improve::ImprovementTargets;
use crate::math::{Tape, Tensor, Var};
use crate::model::{BoundNetwork, Support};

/// Loss components of one update, each averaged over unroll steps and batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
    pub regularizer: f64,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Weights applied to each component when forming the total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reward: f32,
    pub value: f32,
    pub policy: f32,
    pub regularizer: f32,
}

/// Predictions along a `K`-step imagined rollout.
pub struct Unrolled<'t> {
    /// `K + 1` entries, `[B, A]` each.
    pub policy_logits: Vec<Var<'t>>,
    /// `K + 1` entries, `[B, bins]` each.
    pub value_logits: Vec<Var<'t>>,
    /// `K` entries for steps `1..=K`; there is no reward at the root.
    pub reward_logits: Vec<Var<'t>>,
}

/// Represents `observations` and steps the dynamics with `actions[k]` for
/// `k < K`, predicting at the root and after every hop.
pub fn unroll<'t>(
    net: &BoundNetwork<'_, 't>,
    observations: Var<'t>,
    actions: &[Vec<usize>],
    gradient_scale: f32,
) -> Unrolled<'t> {
    let mut latent = net.represent(observations);
    let (p, v) = net.predict(latent);
    let mut out = Unrolled {
        policy_logits: vec![p],
        value_logits: vec![v],
        reward_logits: Vec::with_capacity(actions.len()),
    };
    for step_actions in actions {
        let (r, next) = net.dynamics(latent, step_actions, gradient_scale);
        let (p, v) = net.predict(next);
        out.reward_logits.push(r);
        out.policy_logits.push(p);
        out.value_logits.push(v);
        latent = next;
    }
    out
}

/// Observations at window index 0 and the `K` dataset actions that follow.
pub fn unroll_inputs(segments: &[Segment], unroll: usize) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let width = segments.first().map_or(0, Segment::obs_dim);
    let rows: Vec<&[f32]> = segments.iter().map(|s| s.observation(0)).collect();
    let obs = Tensor::stack_rows(&rows, width)?;
    let actions = (0..unroll)
        .map(|k| segments.iter().map(|s| s.actions[k]).collect())
        .collect();
    Ok((obs, actions))
}

/// `−Σ targets ⊙ log softmax(logits)` over every row.
fn cross_entropy_sum<'t>(tape: &'t Tape, logits: Var<'t>, targets: Vec<f32>) -> Var<'t> {
    let shape = logits.shape();
    let targets = tape.constant(Tensor::from_parts(shape, targets));
    logits.log_softmax().mul(targets).sum().scale(-1.0)
}

fn check_finite(name: &str, k: usize, logits: Var<'_>) -> Result<()> {
    let value = logits.value();
    if value.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} logits at unroll step {k}")))
    }
}

/// The weighted total and its components.
///
/// `regularized` selects which rows feed the behavior term: dataset actions
/// whose advantage under the targets is positive, within the episode.
pub fn compute_losses<'t>(
    tape: &'t Tape,
    unrolled: &Unrolled<'t>,
    targets: &[ImprovementTargets],
    segments: &[Segment],
    support: Support,
    weights: LossWeights,
) -> Result<(Var<'t>, LossReport)> {
    let batch = segments.len();
    let steps = unrolled.policy_logits.len();
    if targets.len() != batch || targets.iter().any(|t| t.len() != steps) {
        return Err(Error::Config(format!(
            "targets do not cover {batch} windows of {steps} unroll steps"
        )));
    }
    if unrolled.reward_logits.len() + 1 != steps {
        return Err(Error::Config("reward predictions must cover steps 1..=K".into()));
    }
    let actions = unrolled.policy_logits[0].shape()[1];
    let bins = support.bins;
    let denom = (batch * steps) as f32;

    let mut reward = None;
    let mut value = None;
    let mut policy = None;
    let mut regularizer = None;
    let acc = |slot: &mut Option<Var<'t>>, term: Var<'t>| {
        *slot = Some(match *slot {
            Some(s) => s + term,
            None => term,
        });
    };

    for k in 0..steps {
        check_finite("policy", k, unrolled.policy_logits[k])?;
        check_finite("value", k, unrolled.value_logits[k])?;

        let mut value_t = Vec::with_capacity(batch * bins);
        let mut policy_t = Vec::with_capacity(batch * actions);
        let mut reg_t = vec![0.0f32; batch * actions];
        for (b, (t, seg)) in targets.iter().zip(segments).enumerate() {
            value_t.extend(support.target(t.value[k]));
            if t.policy_mask[k] {
                policy_t.extend_from_slice(&t.policy[k]);
                if t.behavior_advantage[k] > 0.0 {
                    reg_t[b * actions + seg.actions[k]] = 1.0;
                }
            } else {
                policy_t.extend(std::iter::repeat(0.0).take(actions));
            }
        }
        acc(&mut value, cross_entropy_sum(tape, unrolled.value_logits[k], value_t));
        acc(&mut policy, cross_entropy_sum(tape, unrolled.policy_logits[k], policy_t));
        acc(&mut regularizer, cross_entropy_sum(tape, unrolled.policy_logits[k], reg_t));

        if k > 0 {
            check_finite("reward", k, unrolled.reward_logits[k - 1])?;
            let reward_t: Vec<f32> = segments
                .iter()
                .flat_map(|s| support.target(s.rewards[k - 1] as f64))
                .collect();
            acc(&mut reward, cross_entropy_sum(tape, unrolled.reward_logits[k - 1], reward_t));
        }
    }

    let mean = |slot: Option<Var<'t>>, n: f32| slot.map(|v| v.scale(1.0 / n));
    let value = mean(value, denom).expect("at least one unroll step");
    let policy = mean(policy, denom).expect("at least one unroll step");
    let regularizer = mean(regularizer, denom).expect("at least one unroll step");
    let reward = mean(reward, (batch * (steps - 1)) as f32);

    let mut total = value.scale(weights.value) + policy.scale(weights.policy) + regularizer.scale(weights.regularizer);
    if let Some(r) = reward {
        total = total + r.scale(weights.reward);
    }

    let read = |v: Var<'_>| v.value().item() as f64;
    let mut report = LossReport {
        reward: reward.map_or(0.0, read),
        value: read(value),
        policy: read(policy),
        regularizer: weights.regularizer as f64 * read(regularizer),
        total: 0.0,
        grad_norm: 0.0,
    };
    report.total = weights.reward as f64 * report.reward
        + weights.value as f64 * report.value
        + weights.policy as f64 * report.policy
        + report.regularizer;
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {report:?}")));
    }
    Ok((total, report))
}

/// `−mean log π(a_t | o_t)` at the window roots; touches no dynamics weights.
pub fn behavior_cloning_loss<'t>(
    tape: &'t Tape,
    net: &BoundNetwork<'_, 't>,
    segments: &[Segment],
) -> Result<(Var<'t>, f64)> {
    let (obs, _) = unroll_inputs(segments, 0)?;
    let (logits, _) = net.predict(net.represent(tape.constant(obs)));
    check_finite("policy", 0, logits)?;
    let actions: Vec<usize> = segments.iter().map(|s| s.actions[0]).collect();
    let count = net.weights().architecture().action_count;
    let targets = Tensor::one_hot(&actions, count).to_vec();
    let loss = cross_entropy_sum(tape, logits, targets).scale(1.0 / segments.len() as f32);
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("behavior cloning loss".into()));
    }
    Ok((loss, value))
}
