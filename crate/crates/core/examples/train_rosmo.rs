//! Trains ROSMO offline on catch and prints each evaluation row.
//!
//! cargo run --release --example train_rosmo -- [dataset.ds] [updates] [out_dir] [algo] [seed]
//!
//! Without a dataset path a default catch dataset is collected first.

use std::env;
use std::time::Instant;

use rosmo::data::{collect_dqn, default_episodes, load_dataset};
use rosmo::envs::{EnvId, NoiseConfig};
use rosmo::trainer::{run_training_with, Algorithm, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let dataset = match args.first().filter(|a| a.as_str() != "-") {
        Some(path) => load_dataset(path)?,
        None => collect_dqn(EnvId::Catch, default_episodes(EnvId::Catch), NoiseConfig::none(), 0)?,
    };
    let updates: u64 = args.get(1).map_or(Ok(2000), |s| s.parse())?;
    let out = args.get(2).cloned().unwrap_or_else(|| "runs/rosmo-catch".into());
    let algorithm: Algorithm = args.get(3).map_or(Ok(Algorithm::Rosmo), |s| s.parse())?;
    let seed: u64 = args.get(4).map_or(Ok(0), |s| s.parse())?;

    let config = TrainConfig {
        total_updates: updates,
        eval_interval: (updates / 10).max(1),
        seed,
        ..TrainConfig::new(algorithm, dataset.env)
    };
    println!(
        "{algorithm} on {}: {} episodes, dataset average return {:.3}",
        dataset.env,
        dataset.episodes(),
        dataset.average_return()
    );
    let started = Instant::now();
    let summary = run_training_with(&config, &dataset, &out, |row| {
        println!(
            "step {:>6}  loss {:.4}  (r {:.4} v {:.4} pi {:.4} reg {:.4})  return {:.3}  score {:.3}  [{:.1}s]",
            row.step,
            row.total_loss,
            row.reward_loss,
            row.value_loss,
            row.policy_loss,
            row.reg_loss,
            row.episode_return_mean,
            row.normalized_score,
            started.elapsed().as_secs_f64()
        );
    })?;
    println!("final mean return {:.3}; artifacts in {out}", summary.final_return_mean());
    Ok(())
}
