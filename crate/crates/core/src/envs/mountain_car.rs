use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StepResult;
use crate::error::{Error, Result};

pub const MAX_STEPS: usize = 1000;
const GOAL: f64 = 0.5;

#[derive(Clone, Debug, Default)]
pub struct MountainCar {
    position: f64,
    velocity: f64,
    steps: usize,
    done: bool,
}

impl MountainCar {
    pub fn new() -> Self {
        MountainCar {
            done: true,
            ..Default::default()
        }
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = rng.gen_range(-0.6..=-0.4);
        self.velocity = 0.0;
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
        self.velocity += (action as f64 - 1.0) * 0.001 - 0.0025 * (3.0 * self.position).cos();
        self.velocity = self.velocity.clamp(-0.07, 0.07);
        self.position = (self.position + self.velocity).clamp(-1.2, 0.6);
        if self.position <= -1.2 && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.steps += 1;
        self.done = self.position >= GOAL || self.steps >= MAX_STEPS;
        Ok(StepResult {
            observation: self.observation(),
            reward: -1.0,
            terminal: self.done,
            truncated: self.done && self.position < GOAL,
            step_index: self.steps,
        })
    }

    pub fn observation(&self) -> Vec<f32> {
        vec![
            self.position as f32,
            self.velocity as f32,
            self.steps as f32 / MAX_STEPS as f32,
        ]
    }

    #[cfg(test)]
    pub(crate) fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
        self.steps = 0;
        self.done = false;
    }
}
