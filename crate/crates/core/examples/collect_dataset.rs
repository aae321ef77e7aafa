//! Records a DQN training history on one task and saves it.
//!
//! cargo run --release --example collect_dataset -- catch 0.0 /tmp/catch.ds

use std::env;
use std::time::Instant;

use rosmo::data::{collect_dqn, default_episodes, save_dataset};
use rosmo::envs::{EnvId, NoiseConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let env_id: EnvId = args.first().map_or("catch", String::as_str).parse()?;
    let epsilon: f32 = args.get(1).map_or(Ok(0.0), |s| s.parse())?;
    let out = args.get(2).cloned().unwrap_or_else(|| format!("{env_id}.ds"));

    let started = Instant::now();
    let dataset = collect_dqn(env_id, default_episodes(env_id), NoiseConfig::new(epsilon, 1)?, 0)?;
    println!(
        "{env_id} eps={epsilon}: {} episodes, {} transitions, average return {:.3} ({:.1}s)",
        dataset.episodes(),
        dataset.transitions(),
        dataset.average_return(),
        started.elapsed().as_secs_f64()
    );
    save_dataset(&dataset, &out)?;
    println!("wrote {out}");
    Ok(())
}
