//! Behavior cloning and ROSMO side by side on the same catch dataset.
//!
//! cargo run --release --example behavior_cloning -- [dataset.ds] [updates] [out_dir]

use std::env;
use std::path::Path;

use rosmo::data::{collect_dqn, default_episodes, load_dataset};
use rosmo::envs::{EnvId, NoiseConfig};
use rosmo::trainer::{run_training, Algorithm, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let dataset = match args.first().filter(|a| a.as_str() != "-") {
        Some(path) => load_dataset(path)?,
        None => collect_dqn(EnvId::Catch, default_episodes(EnvId::Catch), NoiseConfig::none(), 0)?,
    };
    let updates: u64 = args.get(1).map_or(Ok(3000), |s| s.parse())?;
    let out = args.get(2).map_or("runs/bc-vs-rosmo", String::as_str);
    println!("dataset average return {:.3}", dataset.average_return());

    for algorithm in [Algorithm::Bc, Algorithm::Rosmo] {
        let config = TrainConfig {
            total_updates: updates,
            eval_interval: updates,
            ..TrainConfig::new(algorithm, dataset.env)
        };
        let summary = run_training(&config, &dataset, Path::new(out).join(algorithm.as_str()))?;
        let row = summary.final_row();
        println!(
            "{algorithm:<6} after {updates} updates: return {:.3}, normalized {:.3}",
            row.episode_return_mean, row.normalized_score
        );
    }
    Ok(())
}
