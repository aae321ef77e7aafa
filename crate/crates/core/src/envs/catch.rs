use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvId, StepResult};
use crate::error::{Error, Result};

pub const ROWS: usize = 10;
pub const COLUMNS: usize = 5;

/// Ball falls one row per step; the paddle on the bottom row moves
/// left/stay/right. Reward arrives only on the last step.
#[derive(Clone, Debug)]
pub struct Catch {
    ball_x: usize,
    ball_y: usize,
    paddle_x: usize,
    steps: usize,
    done: bool,
}

impl Default for Catch {
    fn default() -> Self {
        Catch {
            ball_x: 0,
            ball_y: 0,
            paddle_x: COLUMNS / 2,
            steps: 0,
            done: true,
        }
    }
}

impl Catch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball_x = rng.gen_range(0..COLUMNS);
        self.ball_y = 0;
        self.paddle_x = COLUMNS / 2;
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
        self.paddle_x = (self.paddle_x + action).saturating_sub(1).min(COLUMNS - 1);
        self.ball_y += 1;
        self.steps += 1;
        let mut reward = 0.0;
        if self.ball_y == ROWS - 1 {
            reward = if self.paddle_x == self.ball_x { 1.0 } else { -1.0 };
            self.done = true;
        }
        debug_assert!(self.steps <= EnvId::Catch.spec().max_episode_steps);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal: self.done,
            truncated: false,
            step_index: self.steps,
        })
    }

    pub fn observation(&self) -> Vec<f32> {
        let mut board = vec![0.0; ROWS * COLUMNS];
        board[self.ball_y * COLUMNS + self.ball_x] = 1.0;
        board[(ROWS - 1) * COLUMNS + self.paddle_x] = 1.0;
        board
    }

    #[cfg(test)]
    pub(crate) fn set_state(&mut self, ball_x: usize, ball_y: usize, paddle_x: usize) {
        self.ball_x = ball_x;
        self.ball_y = ball_y;
        self.paddle_x = paddle_x;
        self.steps = ball_y;
        self.done = false;
    }
}
