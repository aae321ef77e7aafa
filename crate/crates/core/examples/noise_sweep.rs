//! A small noise sweep on catch comparing ROSMO with MZU, followed by a
//! report over every run it produced.
//!
//! cargo run --release --example noise_sweep -- [updates] [out_dir]

use std::env;

use rosmo::envs::EnvId;
use rosmo::expyard::{report, GridValue, SweepKind, SweepSpec};
use rosmo::trainer::{Algorithm, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let updates: u64 = args.first().map_or(Ok(500), |s| s.parse())?;
    let out = args.get(1).map_or("sweeps/noise-demo", String::as_str);

    let base = TrainConfig {
        total_updates: updates,
        eval_interval: updates,
        eval_episodes: 16,
        ..TrainConfig::new(Algorithm::Rosmo, EnvId::Catch)
    };
    let mut spec = SweepSpec::new(SweepKind::Noise, base, out);
    spec.grid = vec![GridValue::Epsilon(0.0), GridValue::Epsilon(0.5)];
    spec.algorithms = vec![Algorithm::Rosmo, Algorithm::Mzu];
    spec.seeds = vec![0];
    spec.dataset_episodes = Some(500);

    let result = rosmo::expyard::run_sweep_with(&spec, |r| {
        println!("  finished {} {} seed {}: ok {}", r.algorithm, r.setting, r.seed, r.ok);
    })?;
    print!("{}", result.to_markdown());

    let table = report(&[format!("{out}/runs")])?;
    print!("\n{}", table.to_markdown());
    Ok(())
}
