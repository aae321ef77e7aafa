//! The value squashing transform and its two-hot categorical encoding on
//! each task's support.
//!
//! cargo run --release --example value_transform -- [x ...]

use std::env;

use rosmo::envs::EnvId;
use rosmo::model::{inverse_transform, scalar_transform, Support};

fn main() -> anyhow::Result<()> {
    let mut xs: Vec<f64> = env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    if xs.is_empty() {
        xs = vec![-1.0, 0.0, 0.5, 1.0, 10.0, 100.0, 1000.0];
    }
    for id in EnvId::ALL {
        let support = Support::for_env(id);
        println!(
            "{id}: {} bins on [{}, {}] in transformed units, raw range ±{:.1}",
            support.bins,
            -support.max,
            support.max,
            inverse_transform(support.max)
        );
        for &x in &xs {
            let y = scalar_transform(x);
            let encoded = support.target(x);
            let hot: Vec<String> = encoded
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, w)| format!("bin {i} ({:+.3}) × {w:.3}", support.center(i)))
                .collect();
            println!(
                "  x {x:>8}  h(x) {y:>8.4}  decoded {:>9.4}  {}",
                support.to_scalar(&encoded),
                hot.join(", ")
            );
        }
    }
    Ok(())
}
