use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rosmo::data::{collect_dqn, default_episodes, load_dataset_for, save_dataset};
use rosmo::envs::{EnvId, NoiseConfig};
use rosmo::expyard::{iqm, normalized_score, report, run_sweep_with, SweepKind, SweepSpec};
use rosmo::improve::PolicyMode;
use rosmo::trainer::{evaluate, load_checkpoint, run_training_with, Algorithm, TrainConfig};

#[derive(Parser)]
#[command(name = "rosmo", version, about = "Offline model-based RL on small control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a DQN online and save its whole history as a dataset.
    Collect {
        #[arg(long)]
        env: EnvId,
        /// Defaults to the task's standard dataset size.
        #[arg(long)]
        episodes: Option<usize>,
        /// Probability that an executed action is replaced by a uniform one.
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent offline on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint greedily.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 32)]
        episodes: usize,
    },
    /// Run a grid sweep described by a JSON file.
    Sweep {
        #[arg(long)]
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge finished runs into a comparison table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write report.csv, report_runs.csv and report.md here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    algo: Algorithm,
    #[arg(long)]
    env: EnvId,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of gradient updates.
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of dataset episodes to train on.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    simulations: Option<usize>,
    /// Search depth limit; 0 is unlimited.
    #[arg(long)]
    depth: Option<usize>,
    /// Behavior-regularizer strength.
    #[arg(long)]
    alpha: Option<f32>,
    /// Dynamics hidden width.
    #[arg(long)]
    capacity: Option<usize>,
    /// Score this many sampled actions instead of every action.
    #[arg(long)]
    sample_budget: Option<usize>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// JSON training config used as the starting point for the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        config.algorithm = self.algo;
        config.env = self.env;
        config.total_updates = self.steps;
        config.seed = self.seed;
        if let Some(v) = self.fraction {
            config.fraction = v;
        }
        if let Some(v) = self.simulations {
            config.search.simulations = v;
        }
        if let Some(v) = self.depth {
            config.search.max_depth = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.capacity {
            config.capacity = v;
        }
        if let Some(samples) = self.sample_budget {
            config.policy_mode = PolicyMode::Sampled { samples };
        }
        if let Some(v) = self.eval_interval {
            config.eval_interval = v;
        }
        if let Some(v) = self.eval_episodes {
            config.eval_episodes = v;
        }
        config.eval_interval = config.eval_interval.min(config.total_updates.max(1));
        config.validate()?;
        Ok(config)
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Collect {
            env,
            episodes,
            noise,
            seed,
            out,
        } => {
            let episodes = episodes.unwrap_or_else(|| default_episodes(env));
            let dataset = collect_dqn(env, episodes, NoiseConfig::new(noise, seed)?, seed)?;
            save_dataset(&dataset, &out)?;
            println!(
                "{env}: {} episodes, {} transitions, average return {:.4} -> {}",
                dataset.episodes(),
                dataset.transitions(),
                dataset.average_return(),
                out.display()
            );
        }
        Command::Train(args) => {
            let config = args.config()?;
            let dataset = load_dataset_for(&args.dataset, config.env)?;
            let quiet = args.quiet;
            let summary = run_training_with(&config, &dataset, &args.out, |row| {
                if !quiet {
                    eprintln!(
                        "step {:>7}  loss {:.4}  return {:.3}  score {:.3}",
                        row.step, row.total_loss, row.episode_return_mean, row.normalized_score
                    );
                }
            })?;
            if let Some(step) = summary.resumed_from {
                eprintln!("resumed from step {step}");
            }
            println!(
                "{} on {}: final mean return {:.4}, normalized {:.4} -> {}",
                config.algorithm,
                config.env,
                summary.final_return_mean(),
                summary.final_row().normalized_score,
                args.out.display()
            );
        }
        Command::Eval { ckpt, episodes } => {
            anyhow::ensure!(episodes > 0, "--episodes must be at least 1");
            let (manifest, weights) = load_checkpoint(&ckpt)?;
            let config = manifest.config;
            let returns = evaluate(&weights, config.algorithm, &config.search_config(), config.env, episodes)?;
            let scores: Vec<f64> = returns.iter().map(|&r| normalized_score(config.env, r)).collect();
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            println!(
                "{} on {}: {episodes} episodes, mean return {mean:.4}, IQM normalized score {:.4}",
                config.algorithm,
                config.env,
                iqm(&scores)?
            );
        }
        Command::Sweep { kind, config } => {
            let spec = SweepSpec::load(&config, Some(kind))?;
            eprintln!("{} runs into {}", spec.run_count(), spec.out.display());
            let result = run_sweep_with(&spec, |r| {
                if r.ok {
                    eprintln!("{} {} seed {}: return {:.3}", r.algorithm, r.setting, r.seed, r.final_return_mean);
                } else {
                    eprintln!("{} {} seed {} failed: {}", r.algorithm, r.setting, r.seed, r.error);
                }
            })?;
            print!("{}", result.to_markdown());
        }
        Command::Report { dirs, out } => {
            let table = report(&dirs)?;
            for dir in &table.skipped {
                eprintln!("skipped unfinished run {}", dir.display());
            }
            if let Some(out) = out {
                table.write(out)?;
            }
            print!("{}", table.to_markdown());
        }
    }
    Ok(())
}
