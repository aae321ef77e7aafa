//! Checks tape gradients of the representation, dynamics and prediction
//! networks against finite differences, on fresh random weights each trial.
//!
//! cargo run --release --example gradient_check -- [trials] [env]

use std::env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rosmo::envs::EnvId;
use rosmo::math::Tensor;
use rosmo::model::{network_gradient_check, Architecture, NetworkWeights};

const STEP: f64 = 1e-2;
const FLOOR: f64 = 1e-6;

fn random(shape: [usize; 2], rng: &mut impl Rng) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let trials: u64 = args.first().map_or(Ok(100), |s| s.parse())?;
    let env_id: EnvId = args.get(1).map_or("catch", String::as_str).parse()?;
    let arch = Architecture::for_env(env_id).with_capacity(64);
    let batch = 4;

    for part in ["repr/", "dyn/", "pred/"] {
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let net = NetworkWeights::new(arch.clone(), &mut rng)?;
            let width = if part == "repr/" { arch.obs_dim } else { arch.latent_dim };
            let input = random([batch, width], &mut rng);
            let c1 = random([batch, arch.latent_dim.max(arch.action_count)], &mut rng);
            let c2 = random([batch, arch.support.bins], &mut rng);
            let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..arch.action_count)).collect();
            let check = network_gradient_check(
                &net,
                part,
                &input,
                |bound, x| {
                    let tape = x.tape();
                    let weights = |c: &Tensor, cols: usize| {
                        let data = (0..batch).flat_map(|r| c.row(r)[..cols].to_vec()).collect();
                        tape.constant(Tensor::new([batch, cols], data).expect("sliced rows"))
                    };
                    match part {
                        "repr/" => (bound.represent(x) * weights(&c1, arch.latent_dim)).sum(),
                        "dyn/" => {
                            let (reward, next) = bound.dynamics(x, &actions, 1.0);
                            (next * weights(&c1, arch.latent_dim)).sum()
                                + (reward.log_softmax() * weights(&c2, arch.support.bins)).sum()
                        }
                        _ => {
                            let (policy, value) = bound.predict(x);
                            (policy.log_softmax() * weights(&c1, arch.action_count)).sum()
                                + (value.log_softmax() * weights(&c2, arch.support.bins)).sum()
                        }
                    }
                },
                STEP,
                &mut rng,
            )?;
            worst = worst.max(check.relative_error(FLOOR));
        }
        println!("{part:<6} {trials} trials, max relative error {worst:.2e}");
    }
    Ok(())
}
