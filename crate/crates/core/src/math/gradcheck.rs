//! Finite-difference checks of tape gradients.
//!
//! A single-coordinate difference in f32 drowns in rounding, so the check
//! measures a directional derivative along a direction `d` over every input
//! at once. `d` leans towards the sign of the analytic gradient, which keeps
//! `g·d` large against the rounding floor. A five-point stencil removes the
//! leading truncation terms.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `g·d` from the tape.
    pub analytic: f64,
    /// The same derivative from the stencil.
    pub numeric: f64,
}

impl GradCheck {
    /// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?.value();
    if !loss.is_scalar() {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    Ok(loss.item() as f64)
}

fn shifted(point: &[Tensor], direction: &[Vec<f32>], step: f64) -> Vec<Tensor> {
    point
        .iter()
        .zip(direction)
        .map(|(t, d)| {
            let data = t.data().iter().zip(d).map(|(&x, &di)| (x as f64 + step * di as f64) as f32).collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape as the input")
        })
        .collect()
}

/// Compares the gradient of the scalar `f(leaves)` at `point` along one
/// random direction of unit length with a central difference of step `h`.
pub fn gradient_check<F>(point: &[Tensor], f: F, h: f64, rng: &mut impl Rng) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut direction: Vec<Vec<f32>> = Vec::with_capacity(point.len());
    let mut norm = 0.0f64;
    for &v in &vars {
        let g = grads.wrt(v);
        let d: Vec<f32> = g
            .data()
            .iter()
            .map(|&gi| gi.signum() * rng.gen_range(0.0..1.0f32) + rng.gen_range(-0.5..0.5f32))
            .collect();
        norm += d.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
        direction.push(d);
    }
    let norm = norm.sqrt().max(f64::MIN_POSITIVE);
    for d in &mut direction {
        d.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    }

    let analytic = vars
        .iter()
        .zip(&direction)
        .map(|(&v, d)| grads.wrt(v).data().iter().zip(d).map(|(&g, &di)| g as f64 * di as f64).sum::<f64>())
        .sum();
    let at = |k: f64| evaluate(&f, &shifted(point, &direction, k * h));
    let numeric = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * h);
    Ok(GradCheck { analytic, numeric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_composite_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new([3, 4], (0..12).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let w = Tensor::new([4, 2], (0..8).map(|i| (i as f32 * 0.91).cos()).collect()).unwrap();
        let check = gradient_check(
            &[x, w],
            |_, v| Ok(v[0].matmul(v[1]).elu().log_softmax().sum()),
            1e-2,
            &mut rng,
        )
        .unwrap();
        assert!(check.relative_error(1e-6) < 1e-3, "{check:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // stop_gradient hides the dependence from the tape but not from the stencil.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::new([1, 3], vec![0.3, -0.8, 1.1]).unwrap();
        let check = gradient_check(&[x], |_, v| Ok((v[0] * v[0].stop_gradient()).sum()), 1e-2, &mut rng).unwrap();
        assert!(check.relative_error(1e-6) > 0.3, "{check:?}");
    }
}
