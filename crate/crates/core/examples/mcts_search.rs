//! Tree search from one observation of a randomly initialised model under a
//! few simulation budgets and depth limits.
//!
//! cargo run --release --example mcts_search -- [seed]

use std::env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rosmo::envs::EnvId;
use rosmo::improve::one_step_q;
use rosmo::mcts::{run_search, SearchConfig};
use rosmo::model::{Architecture, NetworkWeights};

fn main() -> anyhow::Result<()> {
    let seed: u64 = env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = NetworkWeights::new(Architecture::for_env(EnvId::Catch), &mut rng)?;
    let obs: Vec<f32> = (0..50).map(|_| if rng.gen_bool(0.04) { 1.0 } else { 0.0 }).collect();
    let root = net.represent(&obs)?;

    for (simulations, max_depth) in [(2, 0), (4, 0), (16, 0), (16, 1), (64, 2)] {
        let config = SearchConfig {
            simulations,
            max_depth,
            ..SearchConfig::default()
        };
        let tree = run_search(&net, &root, &config);
        let depth = if max_depth == 0 { "inf".to_string() } else { max_depth.to_string() };
        println!(
            "N={simulations:<3} d={depth:<3} visits {:?}  Q {:.4?}  root value {:.4}  policy {:.3?}  deepest {}",
            tree.root_visits(),
            tree.root_q(),
            tree.root_value(),
            tree.policy_target(1.0)?,
            tree.max_depth()
        );
    }
    let q: Vec<f64> = (0..3).map(|a| one_step_q(&net, &root, a, SearchConfig::default().discount)).collect();
    println!("one-step Q for comparison with the d=1 row: {q:.4?}");
    Ok(())
}
