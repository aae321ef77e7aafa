//! Loads a run's checkpoint and evaluates it greedily, per episode.
//!
//! cargo run --release --example evaluate_checkpoint -- runs/rosmo-catch/checkpoint.ckpt [episodes]

use std::env;

use rosmo::expyard::{iqm, normalized_score};
use rosmo::trainer::{evaluate, load_checkpoint, EVAL_SEED_BASE};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let path = args.first().map_or("runs/rosmo-catch/checkpoint.ckpt", String::as_str);
    let episodes: usize = args.get(1).map_or(Ok(16), |s| s.parse())?;

    let (manifest, weights) = load_checkpoint(path)?;
    let config = manifest.config;
    println!(
        "{} on {}, seed {}, trained on {} episodes (dataset checksum {:08x})",
        config.algorithm, config.env, config.seed, manifest.dataset.training_episodes, manifest.dataset.checksum
    );
    let returns = evaluate(&weights, config.algorithm, &config.search_config(), config.env, episodes)?;
    for (i, r) in returns.iter().enumerate() {
        println!("  reset seed {:#x}: return {r}", EVAL_SEED_BASE + i as u64);
    }
    let scores: Vec<f64> = returns.iter().map(|&r| normalized_score(config.env, r)).collect();
    println!("IQM normalized score {:.3}", iqm(&scores)?);
    Ok(())
}
