use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StepResult;
use crate::error::{Error, Result};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const POLE_LENGTH: f64 = 0.5;
const FORCE: f64 = 10.0;
const TIMESCALE: f64 = 0.01;
const HEIGHT_THRESHOLD: f64 = 0.8;
const X_THRESHOLD: f64 = 3.0;
const INIT_RANGE: f64 = 0.05;
pub const MAX_STEPS: usize = 1000;

/// Balance task: +1 per step while the pole is upright (cos θ > 0.8) and the
/// cart is within |x| < 3; the episode ends on the first unbalanced step.
#[derive(Clone, Debug, Default)]
pub struct Cartpole {
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    done: bool,
}

impl Cartpole {
    pub fn new() -> Self {
        Cartpole {
            done: true,
            ..Default::default()
        }
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.gen_range(-INIT_RANGE..INIT_RANGE);
        self.x = draw();
        self.x_dot = draw();
        self.theta = draw();
        self.theta_dot = draw();
        self.steps = 0;
        self.done = false;
        StepResult {
            observation: self.observation(),
            reward: 0.0,
            terminal: false,
            truncated: false,
            step_index: 0,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        if action >= 3 {
            return Err(Error::InvalidAction { action, count: 3 });
        }
        let force = (action as f64 - 1.0) * FORCE;
        let (sin, cos) = self.theta.sin_cos();
        let total_mass = MASS_CART + MASS_POLE;
        let pole_moment = MASS_POLE * POLE_LENGTH;
        let temp = (force + pole_moment * self.theta_dot * self.theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

        self.x += TIMESCALE * self.x_dot;
        self.x_dot += TIMESCALE * x_acc;
        self.theta += TIMESCALE * self.theta_dot;
        self.theta_dot += TIMESCALE * theta_acc;
        self.steps += 1;

        let balanced = self.theta.cos() > HEIGHT_THRESHOLD && self.x.abs() < X_THRESHOLD;
        self.done = !balanced || self.steps >= MAX_STEPS;
        Ok(StepResult {
            observation: self.observation(),
            reward: if balanced { 1.0 } else { 0.0 },
            terminal: self.done,
            truncated: balanced && self.done,
            step_index: self.steps,
        })
    }

    pub fn observation(&self) -> Vec<f32> {
        vec![
            self.x as f32,
            self.x_dot as f32,
            self.theta.sin() as f32,
            self.theta.cos() as f32,
            self.theta_dot as f32,
            self.steps as f32 / MAX_STEPS as f32,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_layout() {
        let mut env = Cartpole::new();
        let obs = env.reset(3).observation;
        assert_eq!(obs.len(), 6);
        assert!((obs[2].powi(2) + obs[3].powi(2) - 1.0).abs() < 1e-6);
        assert_eq!(obs[5], 0.0);
    }

    #[test]
    fn pushing_one_way_eventually_fails() {
        let mut env = Cartpole::new();
        env.reset(0);
        let mut ret = 0.0;
        loop {
            let r = env.step(2).unwrap();
            ret += r.reward;
            if r.terminal {
                assert_eq!(r.reward, 0.0);
                break;
            }
        }
        assert!(ret > 0.0 && ret < MAX_STEPS as f32);
    }
}
