//! One-step look-ahead on a randomly initialised model: Q-values,
//! advantages, the exact improved policy and its sampled estimate.
//!
//! cargo run --release --example one_step_improvement -- [seed] [samples]

use std::env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rosmo::envs::EnvId;
use rosmo::improve::{
    exact_policy_target, one_step_lookahead, sampled_policy_target, ADVANTAGE_CLIP, DEFAULT_DISCOUNT,
};
use rosmo::math::Tensor;
use rosmo::model::{Architecture, NetworkWeights};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(0), |s| s.parse())?;
    let samples: usize = args.get(1).map_or(Ok(4), |s| s.parse())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = NetworkWeights::new(Architecture::for_env(EnvId::Cartpole), &mut rng)?;
    let obs: Vec<f32> = (0..3 * 6).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let latents = net.represent_batch(&Tensor::new([3, 6], obs)?)?;

    for (i, step) in one_step_lookahead(&net, &latents, DEFAULT_DISCOUNT).iter().enumerate() {
        let adv = step.advantages();
        let improved = exact_policy_target(&step.prior, &adv, 1.0, ADVANTAGE_CLIP);
        println!("state {i}: v = {:.4}", step.value);
        println!("  q          {:.4?}", step.q);
        println!("  advantage  {adv:.4?}");
        println!("  prior      {:.4?}", step.prior);
        println!("  improved   {improved:.4?}");

        // The sampled target is unbiased only on average, so average many draws.
        let draws = 2000;
        let mut mean = vec![0.0f64; improved.len()];
        for _ in 0..draws {
            let t = sampled_policy_target(&step.prior, &adv, samples, 1.0, ADVANTAGE_CLIP, &mut rng);
            for (m, w) in mean.iter_mut().zip(&t.weights) {
                *m += *w as f64 / draws as f64;
            }
        }
        println!("  sampled    {mean:.4?} (N = {samples}, {draws} draws)");
    }
    Ok(())
}
