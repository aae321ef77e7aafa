//! One-step look-ahead policy improvement.
//!
//! Each latent is unrolled by a single dynamics step per action with the
//! target network, giving `q(s, a) = r(s, a) + γ v(s′)` and the advantage
//! `A(s, a) = q(s, a) − v(s)`. Policy targets reweight the prior by
//! `exp(A)`; value targets are n-step returns of dataset rewards
//! bootstrapped from the target value head.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Segment;
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::model::{LatentModel, LatentState, NetworkWeights};

/// `0.997⁴`, the per-step discount.
pub const DEFAULT_DISCOUNT: f64 = 0.988_053_892_081;
pub const ADVANTAGE_CLIP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyMode {
    /// Enumerate every action.
    Exact,
    /// Draw this many actions from the prior.
    Sampled { samples: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosmoConfig {
    pub discount: f64,
    pub mode: PolicyMode,
    /// Temperature on the advantages inside `exp`.
    pub temperature: f64,
    pub advantage_clip: f64,
}

impl Default for RosmoConfig {
    fn default() -> Self {
        RosmoConfig {
            discount: DEFAULT_DISCOUNT,
            mode: PolicyMode::Exact,
            temperature: 1.0,
            advantage_clip: ADVANTAGE_CLIP,
        }
    }
}

/// Result of unrolling one latent a single step for every action.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStep {
    pub prior: Vec<f32>,
    pub value: f64,
    pub q: Vec<f64>,
}

impl OneStep {
    pub fn advantages(&self) -> Vec<f64> {
        self.q.iter().map(|q| q - self.value).collect()
    }
}

/// Batched look-ahead over every row of `latents`.
pub fn one_step_lookahead<M: LatentModel + ?Sized>(model: &M, latents: &Tensor, discount: f64) -> Vec<OneStep> {
    let actions = model.action_count();
    let rows = latents.rows();
    let (priors, values) = model.predict_rows(latents);

    let width = latents.cols();
    let mut repeated = Vec::with_capacity(rows * actions * width);
    let mut chosen = Vec::with_capacity(rows * actions);
    for r in 0..rows {
        for a in 0..actions {
            repeated.extend_from_slice(latents.row(r));
            chosen.push(a);
        }
    }
    let repeated = Tensor::new([rows * actions, width], repeated).expect("rows have the latent width");
    let (rewards, next) = model.step_rows(&repeated, &chosen);
    let (_, next_values) = model.predict_rows(&next);

    priors
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(r, (prior, value))| OneStep {
            prior,
            value,
            q: (0..actions)
                .map(|a| rewards[r * actions + a] + discount * next_values[r * actions + a])
                .collect(),
        })
        .collect()
}

/// `q(s, a) = r + γ v(s′)` where `(r, s′)` is one dynamics step from `state`.
pub fn one_step_q<M: LatentModel + ?Sized>(model: &M, state: &LatentState, action: usize, discount: f64) -> f64 {
    let latent = Tensor::new([1, state.0.len()], state.0.clone()).expect("latent row");
    let (rewards, next) = model.step_rows(&latent, &[action]);
    let (_, values) = model.predict_rows(&next);
    rewards[0] + discount * values[0]
}

fn tilt(advantages: &[f64], temperature: f64, clip: f64) -> Vec<f64> {
    advantages
        .iter()
        .map(|&a| (a.clamp(-clip, clip) / temperature).exp())
        .collect()
}

/// `p(a) ∝ prior(a) · exp(A(a) / β)` over the whole action set.
pub fn exact_policy_target(prior: &[f32], advantages: &[f64], temperature: f64, clip: f64) -> Vec<f32> {
    let shift = advantages.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(-clip, clip);
    let shifted: Vec<f64> = advantages.iter().map(|a| a.clamp(-clip, clip) - shift).collect();
    let weights: Vec<f64> = tilt(&shifted, temperature, f64::INFINITY)
        .iter()
        .zip(prior)
        .map(|(w, &p)| w * p as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total) as f32).collect()
}

/// Sampled target: `samples` actions are drawn from `prior`, the k-th gets
/// weight `exp(A_k) / Z⁽ᵏ⁾` with `Z⁽ᵏ⁾ = (1 + Σ_{i≠k} exp(A_i)) / N`, and
/// each action's entry is the sum of its sample weights divided by `N`.
///
/// The entries need not sum to one. Cross-entropy against this vector is the
/// sampled policy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTarget {
    pub weights: Vec<f32>,
    pub actions: Vec<usize>,
}

pub fn sampled_policy_target(
    prior: &[f32],
    advantages: &[f64],
    samples: usize,
    temperature: f64,
    clip: f64,
    rng: &mut impl Rng,
) -> SampledTarget {
    assert!(samples >= 1, "sampled mode needs at least one sample");
    let dist = WeightedIndex::new(prior.iter().map(|&p| p.max(0.0) as f64)).expect("prior has positive mass");
    let actions: Vec<usize> = (0..samples).map(|_| dist.sample(rng)).collect();
    let picked: Vec<f64> = actions.iter().map(|&a| advantages[a]).collect();
    let exps = tilt(&picked, temperature, clip);
    let total: f64 = exps.iter().sum();
    let n = samples as f64;
    let mut weights = vec![0.0f64; prior.len()];
    for (k, &a) in actions.iter().enumerate() {
        let z = (1.0 + total - exps[k]) / n;
        weights[a] += exps[k] / z / n;
    }
    SampledTarget {
        weights: weights.into_iter().map(|w| w as f32).collect(),
        actions,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTarget {
    pub probs: Vec<f32>,
    pub advantages: Vec<f64>,
}

/// Policy target at a single latent using `model` as the target network.
pub fn policy_target<M: LatentModel + ?Sized>(
    model: &M,
    state: &LatentState,
    config: &RosmoConfig,
    rng: &mut impl Rng,
) -> PolicyTarget {
    let latent = Tensor::new([1, state.0.len()], state.0.clone()).expect("latent row");
    let step = one_step_lookahead(model, &latent, config.discount).remove(0);
    let advantages = step.advantages();
    let probs = targets_for(&step.prior, &advantages, config, rng);
    PolicyTarget { probs, advantages }
}

fn targets_for(prior: &[f32], advantages: &[f64], config: &RosmoConfig, rng: &mut impl Rng) -> Vec<f32> {
    match config.mode {
        PolicyMode::Exact => exact_policy_target(prior, advantages, config.temperature, config.advantage_clip),
        PolicyMode::Sampled { samples } => {
            sampled_policy_target(prior, advantages, samples, config.temperature, config.advantage_clip, rng).weights
        }
    }
}

/// `Σ_{i<n} γⁱ r_{j+i} + γⁿ · bootstrap`.
pub fn n_step_target(rewards: &[f32], j: usize, n: usize, discount: f64, bootstrap: f64) -> f64 {
    let mut total = 0.0;
    let mut scale = 1.0;
    for &r in &rewards[j..j + n] {
        total += scale * r as f64;
        scale *= discount;
    }
    total + scale * bootstrap
}

/// n-step value target for window index `j`, bootstrapped with the target
/// network's value of `o_{t+j+n}`. Steps past the episode end count as an
/// absorbing state worth zero.
pub fn value_target(target: &NetworkWeights, segment: &Segment, j: usize, n: usize, discount: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("TD steps must be at least 1".into()));
    }
    if j + n >= segment.len() {
        return Err(Error::Config(format!(
            "index {j} with {n} TD steps exceeds a window of {} observations",
            segment.len()
        )));
    }
    let bootstrap = if segment.in_episode(j + n) {
        target.predict(&target.represent(segment.observation(j + n))?).value
    } else {
        0.0
    };
    Ok(n_step_target(&segment.rewards, j, n, discount, bootstrap))
}

/// `−(1/len) Σ_j log π_j(a_j) · 1[A_j > 0]`.
pub fn behavior_regularizer(action_log_probs: &[f64], advantages: &[f64]) -> f64 {
    assert_eq!(action_log_probs.len(), advantages.len());
    let total: f64 = action_log_probs
        .iter()
        .zip(advantages)
        .filter(|(_, &a)| a > 0.0)
        .map(|(lp, _)| -lp)
        .sum();
    total / action_log_probs.len() as f64
}

/// Targets for the `K + 1` unroll steps of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovementTargets {
    pub policy: Vec<Vec<f32>>,
    pub value: Vec<f64>,
    /// Advantage of the dataset action `a_{t+j}`.
    pub behavior_advantage: Vec<f64>,
    /// False where the unroll step lies past the end of the episode.
    pub policy_mask: Vec<bool>,
}

impl ImprovementTargets {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Latents `h_θ′(o_{t+i})` for every observation of every window, row-major
/// by window then index.
pub fn window_latents(target: &NetworkWeights, segments: &[Segment]) -> Result<Tensor> {
    let rows: Vec<&[f32]> = segments
        .iter()
        .flat_map(|s| (0..s.len()).map(move |i| s.observation(i)))
        .collect();
    let width = segments.first().map_or(0, Segment::obs_dim);
    target.represent_batch(&Tensor::stack_rows(&rows, width)?)
}

pub(crate) fn select_rows(t: &Tensor, rows: impl Iterator<Item = usize>) -> Tensor {
    let parts: Vec<&[f32]> = rows.map(|r| t.row(r)).collect();
    Tensor::stack_rows(&parts, t.cols()).expect("rows share a width")
}

/// Policy and value targets for a batch of windows with `K = unroll` and
/// `n = td_steps`.
pub fn improve_batch(
    target: &NetworkWeights,
    segments: &[Segment],
    unroll: usize,
    td_steps: usize,
    config: &RosmoConfig,
    rng: &mut impl Rng,
) -> Result<Vec<ImprovementTargets>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let span = unroll + td_steps + 1;
    if let Some(s) = segments.iter().find(|s| s.len() < span) {
        return Err(Error::Config(format!(
            "window of {} observations is shorter than K + n + 1 = {span}",
            s.len()
        )));
    }
    let latents = window_latents(target, segments)?;
    let stride = segments[0].len();
    let (_, values) = target.predict_rows(&latents);
    let heads = select_rows(
        &latents,
        (0..segments.len()).flat_map(|b| (0..=unroll).map(move |j| b * stride + j)),
    );
    let steps = one_step_lookahead(target, &heads, config.discount);

    let mut out = Vec::with_capacity(segments.len());
    for (b, seg) in segments.iter().enumerate() {
        let mut t = ImprovementTargets {
            policy: Vec::with_capacity(unroll + 1),
            value: Vec::with_capacity(unroll + 1),
            behavior_advantage: Vec::with_capacity(unroll + 1),
            policy_mask: Vec::with_capacity(unroll + 1),
        };
        for j in 0..=unroll {
            let step = &steps[b * (unroll + 1) + j];
            let advantages = step.advantages();
            t.policy.push(targets_for(&step.prior, &advantages, config, rng));
            t.behavior_advantage.push(advantages[seg.actions[j]]);
            t.policy_mask.push(seg.in_episode(j));
            let bootstrap = if seg.in_episode(j + td_steps) {
                values[b * stride + j + td_steps]
            } else {
                0.0
            };
            t.value.push(n_step_target(&seg.rewards, j, td_steps, config.discount, bootstrap));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn improve(
    target: &NetworkWeights,
    segment: &Segment,
    unroll: usize,
    td_steps: usize,
    config: &RosmoConfig,
    rng: &mut impl Rng,
) -> Result<ImprovementTargets> {
    Ok(improve_batch(target, std::slice::from_ref(segment), unroll, td_steps, config, rng)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use crate::envs::EnvId;
    use crate::model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every state has the same prior and value; every step yields the same reward.
    struct Constant {
        prior: Vec<f32>,
        value: f64,
        reward: f64,
    }

    impl LatentModel for Constant {
        fn action_count(&self) -> usize {
            self.prior.len()
        }
        fn predict_rows(&self, latents: &Tensor) -> (Vec<Vec<f32>>, Vec<f64>) {
            (vec![self.prior.clone(); latents.rows()], vec![self.value; latents.rows()])
        }
        fn step_rows(&self, latents: &Tensor, _: &[usize]) -> (Vec<f64>, Tensor) {
            (vec![self.reward; latents.rows()], latents.clone())
        }
    }

    fn net(seed: u64) -> NetworkWeights {
        NetworkWeights::new(Architecture::for_env(EnvId::MountainCar), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn q_arithmetic() {
        let m = Constant {
            prior: vec![0.5, 0.5],
            value: 2.0,
            reward: 1.0,
        };
        let s = LatentState(vec![0.0; 4]);
        assert_eq!(one_step_q(&m, &s, 0, 0.5), 2.0);
        assert_eq!(one_step_q(&m, &s, 1, 0.0), 1.0);
    }

    #[test]
    fn q_matches_explicit_composition() {
        let n = net(0);
        let s = n.represent(&[-0.5, 0.01, 0.2]).unwrap();
        for a in 0..3 {
            let t = n.dynamics(&s, a).unwrap();
            let expected = t.reward + 0.9 * n.predict(&t.next).value;
            assert!((one_step_q(&n, &s, a, 0.9) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_target_cases() {
        let p = exact_policy_target(&[0.2, 0.3, 0.5], &[0.7, 0.7, 0.7], 1.0, 20.0);
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-7);
        }
        let p = exact_policy_target(&[0.5, 0.5], &[2f64.ln(), 0.5f64.ln()], 1.0, 20.0);
        assert!((p[0] - 0.8).abs() < 1e-6 && (p[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn exact_target_ignores_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let prior: Vec<f32> = {
                let raw: Vec<f32> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f32 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            };
            let adv: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f64> = adv.iter().map(|a| a + c).collect();
            let a = exact_policy_target(&prior, &adv, 1.0, 20.0);
            let b = exact_policy_target(&prior, &shifted, 1.0, 20.0);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_advantages_do_not_overflow() {
        let p = exact_policy_target(&[0.5, 0.5], &[1e6, -1e6], 1.0, 20.0);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(p[0] > 0.999);
    }

    #[test]
    fn single_sample_weight_is_exp_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = sampled_policy_target(&[0.0, 1.0, 0.0], &[0.0, 0.3, 0.0], 1, 1.0, 20.0, &mut rng);
        assert_eq!(t.actions, vec![1]);
        assert!((t.weights[1] as f64 - 0.3f64.exp()).abs() < 1e-6);
        assert_eq!(t.weights[0], 0.0);
    }

    #[test]
    fn sampled_loss_tracks_exact_loss() {
        let prior = [0.3f32, 0.3, 0.4];
        let adv = [0.12, -0.05, -0.04];
        let log_pi = [0.5f64.ln(), 0.2f64.ln(), 0.3f64.ln()];
        let exact = exact_policy_target(&prior, &adv, 1.0, 20.0);
        let exact_loss: f64 = exact.iter().zip(&log_pi).map(|(&p, lp)| -(p as f64) * lp).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let losses: Vec<f64> = (0..draws)
            .map(|_| {
                let t = sampled_policy_target(&prior, &adv, 3, 1.0, 20.0, &mut rng);
                t.weights.iter().zip(&log_pi).map(|(&w, lp)| -(w as f64) * lp).sum()
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / draws as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - exact_loss).abs() < 2.0 * se, "mean {mean} exact {exact_loss} se {se}");
    }

    #[test]
    fn n_step_sums() {
        assert_eq!(n_step_target(&[1.0, 2.0], 0, 1, 1.0, 5.0), 6.0);
        assert_eq!(n_step_target(&[1.0, 2.0, 3.0], 1, 2, 0.5, 8.0), 2.0 + 1.5 + 2.0);
        assert_eq!(n_step_target(&[1.0, 2.0, 3.0], 0, 3, 0.0, 8.0), 1.0);
    }

    #[test]
    fn regularizer_cases() {
        assert_eq!(behavior_regularizer(&[-1.0, -2.0], &[0.0, -0.5]), 0.0);
        assert_eq!(behavior_regularizer(&[0.0], &[1.0]), 0.0);
        let k_plus_one = 6.0;
        let mut lp = vec![-5.0; 6];
        lp[0] = -1.0;
        let mut adv = vec![-1.0; 6];
        adv[0] = 0.5;
        assert!((behavior_regularizer(&lp, &adv) - 1.0 / k_plus_one).abs() < 1e-12);
    }

    fn window(len: usize, seed: u64) -> Segment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tr = Trajectory::new(3);
        for _ in 0..len {
            let obs = [rng.gen_range(-1.0..0.5), rng.gen_range(-0.07..0.07), rng.gen()];
            tr.push(&obs, rng.gen_range(0..3), rng.gen_range(-1.0..1.0));
        }
        Segment::cut(&tr, 0, 0, len - 1, 3, &mut rng)
    }

    #[test]
    fn value_target_matches_loop() {
        let n = net(4);
        let seg = window(9, 5);
        for j in 0..=5 {
            let z = value_target(&n, &seg, j, 3, 0.9).unwrap();
            let mut expected = 0.0;
            for i in 0..3 {
                expected += 0.9f64.powi(i as i32) * seg.rewards[j + i] as f64;
            }
            let boot = n.predict(&n.represent(seg.observation(j + 3)).unwrap()).value;
            expected += 0.9f64.powi(3) * boot;
            assert!((z - expected).abs() < 1e-6);
        }
        assert!(value_target(&n, &seg, 0, 0, 0.9).is_err());
        assert!(value_target(&n, &seg, 6, 3, 0.9).is_err());
    }

    #[test]
    fn improve_matches_composition_and_is_deterministic() {
        let n = net(6);
        let seg = window(9, 7);
        let cfg = RosmoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = improve(&n, &seg, 5, 3, &cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t, improve(&n, &seg, 5, 3, &cfg, &mut rng).unwrap());
        for j in 0..=5 {
            let s = n.represent(seg.observation(j)).unwrap();
            let p = policy_target(&n, &s, &cfg, &mut rng);
            for (a, b) in p.probs.iter().zip(&t.policy[j]) {
                assert!((a - b).abs() < 1e-6);
            }
            assert!((p.advantages[seg.actions[j]] - t.behavior_advantage[j]).abs() < 1e-9);
            let z = value_target(&n, &seg, j, 3, cfg.discount).unwrap();
            assert!((z - t.value[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_unroll_gives_one_pair() {
        let n = net(8);
        let seg = window(5, 9);
        let t = improve(&n, &seg, 0, 3, &RosmoConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((t.policy.len(), t.value.len()), (1, 1));
    }

    #[test]
    fn uniform_stub_target_is_its_prior() {
        let m = Constant {
            prior: vec![1.0 / 3.0; 3],
            value: 0.0,
            reward: 0.0,
        };
        let t = policy_target(&m, &LatentState(vec![0.0; 2]), &RosmoConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(t.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-7));
    }
}
