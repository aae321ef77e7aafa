//! Plays random episodes on each task, with and without action noise, and
//! prints episode lengths and returns.
//!
//! cargo run --release --example env_rollout -- [episodes] [epsilon]

use std::env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rosmo::envs::{noisy_step, ActionNoise, Env, EnvId, NoiseConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let episodes: u64 = args.first().map_or(Ok(20), |s| s.parse())?;
    let epsilon: f32 = args.get(1).map_or(Ok(0.5), |s| s.parse())?;

    for id in EnvId::ALL {
        let spec = id.spec();
        let mut env = Env::new(id);
        let mut noise = ActionNoise::new(NoiseConfig::new(epsilon, 0)?);
        let mut policy = ChaCha8Rng::seed_from_u64(1);
        let (mut total_return, mut total_steps, mut replaced) = (0.0, 0, 0);
        for seed in 0..episodes {
            env.reset(seed);
            loop {
                let step = noisy_step(&mut env, policy.gen_range(0..spec.action_count), &mut noise)?;
                total_return += step.result.reward as f64;
                total_steps += 1;
                replaced += step.replaced as usize;
                if step.result.terminal {
                    break;
                }
            }
        }
        println!(
            "{id:<12} obs {:>2}  actions {}  cap {:>4}  mean length {:>7.1}  mean return {:>8.2}  replaced {:.0}%",
            spec.observation_dim,
            spec.action_count,
            spec.max_episode_steps,
            total_steps as f64 / episodes as f64,
            total_return / episodes as f64,
            100.0 * replaced as f64 / total_steps as f64
        );
    }
    Ok(())
}
