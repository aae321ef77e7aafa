//! Fully connected layers whose weights live in a [`ParamSet`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tape::{elu, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Elu => x.elu(),
            Activation::Relu => x.relu(),
        }
    }

    #[inline]
    pub fn eval(self, x: f32) -> f32 {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Indices of one layer's weight `[in, out]` and bias `[out]` in a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Registers `{name}/w` and `{name}/b`; weights are uniform in ±1/√in, biases zero.
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Dense {
        let bound = 1.0 / (inputs as f32).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = params.push(format!("{name}/w"), Tensor::from_parts(vec![inputs, outputs], data));
        let bias = params.push(format!("{name}/b"), Tensor::zeros([outputs]));
        Dense {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<'t>(&self, vars: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        x.matmul(vars[self.weight]) + vars[self.bias]
    }

    /// Gradient-free forward pass over a `[batch, in]` matrix.
    pub fn eval(&self, params: &ParamSet, x: &Tensor, activation: Option<Activation>) -> Tensor {
        let mut out = x
            .matmul(params.tensor(self.weight))
            .expect("layer input width matches its weight")
            .to_vec();
        let bias = params.tensor(self.bias).data();
        for row in out.chunks_mut(self.outputs) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
                if let Some(act) = activation {
                    *v = act.eval(*v);
                }
            }
        }
        Tensor::from_parts(vec![x.rows(), self.outputs], out)
    }
}

/// A stack of dense layers with an activation between hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Whether the last layer is also followed by the activation.
    pub activate_last: bool,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        inputs: usize,
        sizes: &[usize],
        activation: Activation,
        activate_last: bool,
        rng: &mut impl Rng,
    ) -> Mlp {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut width = inputs;
        for (i, &size) in sizes.iter().enumerate() {
            layers.push(Dense::new(params, &format!("{prefix}/{i}"), width, size, rng));
            width = size;
        }
        Mlp {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward<'t>(&self, vars: &[Var<'t>], mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(vars, x);
            if i < last || self.activate_last {
                x = self.activation.apply(x);
            }
        }
        x
    }

    pub fn eval(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let last = self.layers.len().saturating_sub(1);
        let mut x = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = (i < last || self.activate_last).then_some(self.activation);
            x = layer.eval(params, &x, act);
        }
        x
    }
}
