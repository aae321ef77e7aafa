//! Representation, dynamics and prediction functions over a shared parameter set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transform::Support;
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::math::{softmax_row, Activation, Dense, Mlp, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub obs_dim: usize,
    pub action_count: usize,
    pub latent_dim: usize,
    /// Hidden widths of the representation MLP; its output is the latent.
    pub repr_hidden: Vec<usize>,
    /// Middle width `H` of the dynamics MLP `[latent, H, latent]`.
    pub dynamics_capacity: usize,
    pub pred_hidden: Vec<usize>,
    pub support: Support,
    pub activation: Activation,
}

impl Architecture {
    pub fn for_env(env: EnvId) -> Self {
        let spec = env.spec();
        Architecture {
            obs_dim: spec.observation_dim,
            action_count: spec.action_count,
            latent_dim: 32,
            repr_hidden: vec![64, 64],
            dynamics_capacity: 256,
            pred_hidden: vec![32],
            support: Support::for_env(env),
            activation: Activation::Elu,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.dynamics_capacity = capacity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.dynamics_capacity == 0 || self.obs_dim == 0 || self.action_count == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    repr: Mlp,
    dynamics: Mlp,
    reward: Dense,
    trunk: Mlp,
    policy: Dense,
    value: Dense,
}

impl Layout {
    fn build(arch: &Architecture, params: &mut ParamSet, rng: &mut impl Rng) -> Layout {
        let act = arch.activation;
        let mut repr_sizes = arch.repr_hidden.clone();
        repr_sizes.push(arch.latent_dim);
        let repr = Mlp::new(params, "repr", arch.obs_dim, &repr_sizes, act, false, rng);
        let dynamics = Mlp::new(
            params,
            "dyn",
            arch.latent_dim + arch.action_count,
            &[arch.latent_dim, arch.dynamics_capacity, arch.latent_dim],
            act,
            false,
            rng,
        );
        let reward = Dense::new(params, "dyn/reward", arch.latent_dim, arch.support.bins, rng);
        let trunk = Mlp::new(params, "pred/trunk", arch.latent_dim, &arch.pred_hidden, act, true, rng);
        let width = arch.pred_hidden.last().copied().unwrap_or(arch.latent_dim);
        let policy = Dense::new(params, "pred/policy", width, arch.action_count, rng);
        let value = Dense::new(params, "pred/value", width, arch.support.bins, rng);
        Layout {
            repr,
            dynamics,
            reward,
            trunk,
            policy,
            value,
        }
    }
}

/// A latent state `s`; rows of a batch matrix in the batched API.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState(pub Vec<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub policy: Vec<f32>,
    pub value_probs: Vec<f32>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub reward_probs: Vec<f32>,
    pub next: LatentState,
}

/// All trainable parameters of the model with their layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    arch: Architecture,
    params: ParamSet,
    layout: Layout,
}

impl NetworkWeights {
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        let layout = Layout::build(&arch, &mut params, rng);
        Ok(NetworkWeights { arch, params, layout })
    }

    /// Adopts `params`, which must carry exactly the names and shapes this
    /// architecture produces.
    pub fn from_params(arch: Architecture, params: ParamSet) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let template = NetworkWeights::new(arch, &mut rng)?;
        if template.params.names() != params.names() {
            return Err(Error::Corrupt(format!(
                "parameter names differ from the architecture: expected {:?}",
                template.params.names()
            )));
        }
        for ((name, want), got) in template.params.iter().zip(params.tensors()) {
            if want.shape() != got.shape() {
                return Err(Error::Corrupt(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(NetworkWeights { params, ..template })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn support(&self) -> Support {
        self.arch.support
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Per-parameter flags that are true where `keep(name)` holds.
    pub fn mask(&self, keep: impl Fn(&str) -> bool) -> Vec<bool> {
        self.params.names().iter().map(|n| keep(n)).collect()
    }

    pub fn bind<'a, 't>(&'a self, tape: &'t Tape) -> BoundNetwork<'a, 't> {
        BoundNetwork {
            net: self,
            vars: self.params.bind(tape),
        }
    }

    /// Uses caller-owned leaves in place of this network's parameters, one
    /// per tensor and in the same order, so values other than the stored
    /// weights can be differentiated.
    pub fn bind_vars<'a, 't>(&'a self, vars: Vec<Var<'t>>) -> Result<BoundNetwork<'a, 't>> {
        if vars.len() != self.params.len() {
            return Err(Error::Config(format!(
                "{} leaves given for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (v, t) in vars.iter().zip(self.params.tensors()) {
            if v.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "bind_vars",
                    lhs: v.shape(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(BoundNetwork { net: self, vars })
    }

    fn check_obs(&self, width: usize) -> Result<()> {
        if width != self.arch.obs_dim {
            return Err(Error::ObservationDim {
                expected: self.arch.obs_dim,
                actual: width,
            });
        }
        Ok(())
    }

    /// `h_θ` over a `[batch, obs_dim]` matrix.
    pub fn represent_batch(&self, observations: &Tensor) -> Result<Tensor> {
        self.check_obs(observations.cols())?;
        Ok(self.layout.repr.eval(&self.params, observations))
    }

    /// `g_θ` over a `[batch, latent]` matrix; returns reward logits and next latents.
    pub fn dynamics_batch(&self, latents: &Tensor, actions: &[usize]) -> (Tensor, Tensor) {
        let input = concat_one_hot(latents, actions, self.arch.action_count);
        let next = self.layout.dynamics.eval(&self.params, &input);
        let reward = self.layout.reward.eval(&self.params, &next, None);
        (reward, next)
    }

    /// `f_θ` over a `[batch, latent]` matrix; returns policy and value logits.
    pub fn predict_batch(&self, latents: &Tensor) -> (Tensor, Tensor) {
        let trunk = self.layout.trunk.eval(&self.params, latents);
        (
            self.layout.policy.eval(&self.params, &trunk, None),
            self.layout.value.eval(&self.params, &trunk, None),
        )
    }

    pub fn represent(&self, observation: &[f32]) -> Result<LatentState> {
        let obs = Tensor::from_parts(vec![1, observation.len()], observation.to_vec());
        Ok(LatentState(self.represent_batch(&obs)?.to_vec()))
    }

    pub fn dynamics(&self, state: &LatentState, action: usize) -> Result<Transition> {
        if action >= self.arch.action_count {
            return Err(Error::InvalidAction {
                action,
                count: self.arch.action_count,
            });
        }
        let latent = Tensor::from_parts(vec![1, state.0.len()], state.0.clone());
        let (logits, next) = self.dynamics_batch(&latent, &[action]);
        let reward_probs = softmax_row(logits.data());
        Ok(Transition {
            reward: self.arch.support.to_scalar(&reward_probs),
            reward_probs,
            next: LatentState(next.to_vec()),
        })
    }

    pub fn predict(&self, state: &LatentState) -> Predictions {
        let latent = Tensor::from_parts(vec![1, state.0.len()], state.0.clone());
        let (policy, value) = self.predict_batch(&latent);
        let value_probs = softmax_row(value.data());
        Predictions {
            policy: softmax_row(policy.data()),
            value: self.arch.support.to_scalar(&value_probs),
            value_probs,
        }
    }

    /// Scalars decoded row by row from categorical logits.
    pub fn decode_rows(&self, logits: &Tensor) -> Vec<f64> {
        (0..logits.rows())
            .map(|r| self.arch.support.to_scalar(&softmax_row(logits.row(r))))
            .collect()
    }
}

fn concat_one_hot(latents: &Tensor, actions: &[usize], action_count: usize) -> Tensor {
    let width = latents.cols();
    let mut data = Vec::with_capacity(latents.rows() * (width + action_count));
    for (r, &a) in actions.iter().enumerate() {
        data.extend_from_slice(latents.row(r));
        data.extend((0..action_count).map(|i| if i == a { 1.0 } else { 0.0 }));
    }
    Tensor::from_parts(vec![actions.len(), width + action_count], data)
}

/// The network recorded on a tape so that gradients reach its parameters.
pub struct BoundNetwork<'a, 't> {
    net: &'a NetworkWeights,
    vars: Vec<Var<'t>>,
}

impl<'a, 't> BoundNetwork<'a, 't> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn weights(&self) -> &'a NetworkWeights {
        self.net
    }

    pub fn represent(&self, observations: Var<'t>) -> Var<'t> {
        self.net.layout.repr.forward(&self.vars, observations)
    }

    /// Returns `(reward_logits, next_latent)`. The incoming latent's gradient
    /// is multiplied by `gradient_scale`.
    pub fn dynamics(&self, latent: Var<'t>, actions: &[usize], gradient_scale: f32) -> (Var<'t>, Var<'t>) {
        let tape = latent.tape();
        let one_hot = tape.constant(Tensor::one_hot(actions, self.net.arch.action_count));
        let input = Var::concat(&[latent.scale_gradient(gradient_scale), one_hot]);
        let next = self.net.layout.dynamics.forward(&self.vars, input);
        let reward = self.net.layout.reward.forward(&self.vars, next);
        (reward, next)
    }

    /// Returns `(policy_logits, value_logits)`.
    pub fn predict(&self, latent: Var<'t>) -> (Var<'t>, Var<'t>) {
        let trunk = self.net.layout.trunk.forward(&self.vars, latent);
        (
            self.net.layout.policy.forward(&self.vars, trunk),
            self.net.layout.value.forward(&self.vars, trunk),
        )
    }
}

/// The frozen copy `θ′` used for targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetNetwork {
    pub weights: NetworkWeights,
    /// Learner step of the most recent copy.
    pub synced_at: u64,
}

impl TargetNetwork {
    pub fn new(online: &NetworkWeights) -> Self {
        TargetNetwork {
            weights: online.clone(),
            synced_at: 0,
        }
    }
}

/// Copies the online weights into the target when `step` is a multiple of
/// `interval`; returns whether a copy happened.
pub fn update_target(online: &NetworkWeights, target: &mut TargetNetwork, step: u64, interval: u64) -> bool {
    if interval > 0 && step % interval == 0 {
        target.weights = online.clone();
        target.synced_at = step;
        true
    } else {
        false
    }
}


/// Finite-difference check of one sub-network. Parameters whose names start
/// with `prefix` and the `input` are perturbed together; the rest stay fixed.
/// `loss` maps the bound network and the input leaf to a scalar.
pub fn network_gradient_check<F>(
    net: &NetworkWeights,
    prefix: &str,
    input: &Tensor,
    loss: F,
    h: f64,
    rng: &mut impl Rng,
) -> Result<crate::math::GradCheck>
where
    F: for<'a, 't> Fn(&BoundNetwork<'a, 't>, Var<'t>) -> Var<'t>,
{
    let chosen: Vec<usize> = (0..net.params.len())
        .filter(|&i| net.params.names()[i].starts_with(prefix))
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config(format!("no parameters start with `{prefix}`")));
    }
    let mut point: Vec<Tensor> = chosen.iter().map(|&i| net.params.tensor(i).clone()).collect();
    point.push(input.clone());
    crate::math::gradient_check(
        &point,
        |tape, leaves| {
            let mut vars: Vec<Var<'_>> = net.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
            for (slot, &i) in chosen.iter().enumerate() {
                vars[i] = leaves[slot];
            }
            let bound = net.bind_vars(vars)?;
            Ok(loss(&bound, leaves[chosen.len()]))
        },
        h,
        rng,
    )
}
