//! Reverse-mode differentiation over a recorded operation list.
//!
//! Every operation appends a node holding its value and the indices of its
//! operands. Node order is creation order, which is already topological, so
//! the backward pass is a single reverse sweep that touches each node once.
//!
//! Shape errors inside the graph panic with both operand shapes in the
//! message; graphs are built by code in this crate whose shapes are fixed by
//! the network architecture.

use std::cell::RefCell;
use std::ops;

use super::tensor::{gemm, log_softmax_in_place, softmax_in_place, GemmOperand, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Map {
    Full,
    Scalar,
    /// Repeats a single row of this many columns.
    Row(usize),
}

impl Map {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Map::Full => i,
            Map::Scalar => 0,
            Map::Row(n) => i % n,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize, Map, Map),
    Scale(usize, f32),
    Offset(usize),
    Elu(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    SumLastAxis(usize),
    Concat(Vec<usize>),
    ScaleGrad(usize, f32),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Single-threaded recorder of differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Result of a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` did not
    /// influence the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[var.id].clone()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Parameters and constants are both leaves; only the
    /// caller decides which gradients it reads.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on a different tape");
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let loss_value = &nodes[loss.id].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&shapes)
            .map(|(g, s)| g.map(|g| Tensor::from_parts(s.clone(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], id: usize, delta: Vec<f32>) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot => *slot = Some(delta),
    }
}

/// Sums `g` (laid out like the broadcast output) back onto an operand of
/// `len` values read through `map`.
fn reduce(g: &[f32], map: Map, len: usize, scale: impl Fn(usize) -> f32) -> Vec<f32> {
    match map {
        Map::Full => g.iter().enumerate().map(|(i, &x)| x * scale(i)).collect(),
        _ => {
            let mut out = vec![0.0; len];
            for (i, &x) in g.iter().enumerate() {
                out[map.index(i)] += x * scale(i);
            }
            out
        }
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let val = |id: usize| &nodes[id].value;
    let y = node.value.data();
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut da = vec![0.0; m * k];
            gemm(
                m,
                n,
                k,
                GemmOperand::normal(g, n),
                GemmOperand::transposed(bv.data(), n),
                &mut da,
                false,
            );
            let mut db = vec![0.0; k * n];
            gemm(
                k,
                m,
                n,
                GemmOperand::transposed(av.data(), k),
                GemmOperand::normal(g, n),
                &mut db,
                false,
            );
            accumulate(grads, a, da);
            accumulate(grads, b, db);
        }
        Op::Binary(kind, a, b, ma, mb) => {
            let (ad, bd) = (val(a).data(), val(b).data());
            match kind {
                Binary::Add => {
                    accumulate(grads, a, reduce(g, ma, ad.len(), |_| 1.0));
                    accumulate(grads, b, reduce(g, mb, bd.len(), |_| 1.0));
                }
                Binary::Sub => {
                    accumulate(grads, a, reduce(g, ma, ad.len(), |_| 1.0));
                    accumulate(grads, b, reduce(g, mb, bd.len(), |_| -1.0));
                }
                Binary::Mul => {
                    let da = reduce(g, ma, ad.len(), |i| bd[mb.index(i)]);
                    let db = reduce(g, mb, bd.len(), |i| ad[ma.index(i)]);
                    accumulate(grads, a, da);
                    accumulate(grads, b, db);
                }
            }
        }
        Op::Scale(a, s) => accumulate(grads, a, g.iter().map(|&x| x * s).collect()),
        Op::ScaleGrad(a, s) => accumulate(grads, a, g.iter().map(|&x| x * s).collect()),
        Op::Offset(a) => accumulate(grads, a, g.to_vec()),
        Op::Elu(a) => {
            let x = val(a).data();
            let d = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&g, (&x, &y))| if x > 0.0 { g } else { g * (y + 1.0) })
                .collect();
            accumulate(grads, a, d);
        }
        Op::Relu(a) => {
            let x = val(a).data();
            let d = g
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                .collect();
            accumulate(grads, a, d);
        }
        Op::Exp(a) => accumulate(grads, a, g.iter().zip(y).map(|(&g, &y)| g * y).collect()),
        Op::Log(a) => {
            let x = val(a).data();
            accumulate(grads, a, g.iter().zip(x).map(|(&g, &x)| g / x).collect());
        }
        Op::Softmax(a) => {
            let c = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                let dot: f32 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((d, &g), &y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = y * (g - dot);
                }
            }
            accumulate(grads, a, d);
        }
        Op::LogSoftmax(a) => {
            let c = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                let total: f32 = gr.iter().sum();
                for ((d, &g), &y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = g - y.exp() * total;
                }
            }
            accumulate(grads, a, d);
        }
        Op::Sum(a) => accumulate(grads, a, vec![g[0]; val(a).numel()]),
        Op::Mean(a) => {
            let n = val(a).numel();
            accumulate(grads, a, vec![g[0] / n as f32; n]);
        }
        Op::SumLastAxis(a) => {
            let c = val(a).cols();
            let d = g.iter().flat_map(|&g| std::iter::repeat(g).take(c)).collect();
            accumulate(grads, a, d);
        }
        Op::Concat(ref parts) => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut offset = 0;
            for &p in parts {
                let c = val(p).cols();
                let mut d = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                }
                accumulate(grads, p, d);
                offset += c;
            }
        }
    }
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> (Vec<usize>, Map, Map) {
    if a.shape() == b.shape() {
        return (a.shape().to_vec(), Map::Full, Map::Full);
    }
    if b.is_scalar() {
        return (a.shape().to_vec(), Map::Full, Map::Scalar);
    }
    if a.is_scalar() {
        return (b.shape().to_vec(), Map::Scalar, Map::Full);
    }
    let is_row = |t: &Tensor| t.rows() == 1;
    if is_row(b) && b.cols() == a.cols() && a.shape().len() >= b.shape().len() {
        return (a.shape().to_vec(), Map::Full, Map::Row(b.cols()));
    }
    if is_row(a) && a.cols() == b.cols() && b.shape().len() >= a.shape().len() {
        return (b.shape().to_vec(), Map::Row(a.cols()), Map::Full);
    }
    panic!(
        "{}",
        Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
    );
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary(self, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var<'t> {
        let out = f(&self.value());
        self.tape.push(out, op)
    }

    fn binary(self, rhs: Var<'t>, kind: Binary, name: &'static str) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, rhs.tape), "operands on different tapes");
        let (a, b) = (self.value(), rhs.value());
        let (shape, ma, mb) = broadcast(name, &a, &b);
        let n: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let f = match kind {
            Binary::Add => |x: f32, y: f32| x + y,
            Binary::Sub => |x: f32, y: f32| x - y,
            Binary::Mul => |x: f32, y: f32| x * y,
        };
        let data = (0..n).map(|i| f(ad[ma.index(i)], bd[mb.index(i)])).collect();
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Binary(kind, self.id, rhs.id, ma, mb),
        )
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let out = self.value().matmul(&rhs.value()).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(out, Op::MatMul(self.id, rhs.id))
    }

    /// Elementwise sum; `rhs` may also be a scalar or a single row.
    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Add, "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Sub, "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Mul, "mul")
    }

    pub fn scale(self, s: f32) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x.map(|v| v * s))
    }

    pub fn offset(self, c: f32) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x.map(|v| v + c))
    }

    pub fn elu(self) -> Var<'t> {
        self.unary(Op::Elu(self.id), |x| x.map(elu))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.map(|v| v.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |x| x.map(f32::exp))
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |x| x.map(f32::ln))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        self.unary(Op::Softmax(self.id), Tensor::softmax)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'t> {
        self.unary(Op::LogSoftmax(self.id), |x| {
            let c = x.cols();
            let mut out = x.to_vec();
            for row in out.chunks_mut(c.max(1)) {
                log_softmax_in_place(row);
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        })
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| {
            Tensor::scalar(x.data().iter().sum())
        })
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |x| {
            Tensor::scalar(x.data().iter().sum::<f32>() / x.numel() as f32)
        })
    }

    /// Sums the last axis, keeping it as extent 1.
    pub fn sum_last_axis(self) -> Var<'t> {
        self.unary(Op::SumLastAxis(self.id), |x| {
            let c = x.cols();
            let data: Vec<f32> = x.data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
            let mut shape = x.shape().to_vec();
            match shape.last_mut() {
                Some(last) => *last = 1,
                None => shape.push(1),
            }
            Tensor::from_parts(shape, data)
        })
    }

    /// Concatenates along the last axis. All parts need the same row count.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts.first().expect("concat of nothing").tape;
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for v in &values[1..] {
            if v.rows() != rows {
                panic!(
                    "{}",
                    Error::Shape {
                        op: "concat",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    }
                );
            }
        }
        let total: usize = values.iter().map(Tensor::cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        tape.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::Concat(parts.iter().map(|p| p.id).collect()),
        )
    }

    /// Same value, no gradient flows back.
    pub fn stop_gradient(self) -> Var<'t> {
        self.tape.leaf(self.value())
    }

    /// Identity forward; the backward pass multiplies the incoming gradient
    /// by `factor`.
    pub fn scale_gradient(self, factor: f32) -> Var<'t> {
        self.unary(Op::ScaleGrad(self.id, factor), Tensor::clone)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[inline]
pub fn elu(x: f32) -> f32 {
    let negative = exp_f32(x.min(0.0)) - 1.0;
    if x > 0.0 {
        x
    } else {
        negative
    }
}

/// Branch-free single-precision `exp` (relative error below 1e-7), several
/// times faster than the libm call inside activation loops.
#[inline]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.3, 88.7);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = ((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2) * r
        + 1.666_666_5e-1)
        * r
        + 5.000_000_1e-1;
    // 2^n as two factors, since n = 128 alone would overflow the exponent field.
    let n = n as i32;
    let half = n >> 1;
    let pow2 = |k: i32| f32::from_bits(((k + 127) as u32) << 23);
    (p * r * r + r + 1.0) * pow2(half) * pow2(n - half)
}

pub(crate) fn softmax_row(row: &[f32]) -> Vec<f32> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x * x;
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let loss = (x.stop_gradient() * y).sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
        assert_eq!(g.wrt(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn unused_leaf_gets_zeros() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::zeros([2, 3]));
        let g = tape.backward(x * x).unwrap();
        let gu = g.wrt(unused);
        assert_eq!(gu.shape(), &[2, 3]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.elu()), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn scale_gradient_factors() {
        for (factor, expected) in [(1.0, 6.0), (0.5, 3.0), (0.0, 0.0)] {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(3.0));
            let s = x.scale_gradient(factor);
            assert_eq!(s.value().item(), 3.0);
            let g = tape.backward(s * s).unwrap();
            assert_eq!(g.wrt(x).item(), expected);
        }
    }

    #[test]
    fn fast_exp_tracks_libm() {
        for i in 0..=20_000 {
            let x = -87.3 + i as f32 * 0.0088;
            let want = (x as f64).exp();
            assert!(((exp_f32(x) as f64 - want) / want).abs() < 2e-7, "{x}");
        }
        assert!(exp_f32(1e4).is_finite() && exp_f32(-1e4) > 0.0);
    }

    #[test]
    fn elu_at_minus_one() {
        let expected = (-1.0f64).exp() - 1.0;
        assert!((elu(-1.0) as f64 - expected).abs() < 1e-7);
        assert!((expected + 0.63212).abs() < 1e-5);
    }

    #[test]
    fn row_broadcast_bias_gradient_sums_rows() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.5, -0.5]));
        let g = tape.backward((x + b).sum()).unwrap();
        assert_eq!(g.wrt(b).data(), &[2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "[2, 3]")]
    fn mismatched_add_panics_with_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros([2, 3]));
        let b = tape.leaf(Tensor::zeros([4, 5]));
        let _ = a + b;
    }

    #[test]
    fn concat_splits_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = Var::concat(&[a, b]);
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = tape.backward((c * w).sum()).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 4.0]);
        assert_eq!(g.wrt(b).data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
