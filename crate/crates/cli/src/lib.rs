//! Command-line interface for training experts, running the benchmark and
//! DAgger suites, evaluating checkpoints and running the self-checks.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gaitlab_core::harness::{self, ExperimentConfig};
use gaitlab_core::{AlgorithmId, DaggerVariant};

#[derive(Debug, Parser, PartialEq)]
#[command(name = "gaitlab", version, about = "Train walking experts and transfer them with DAgger")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, PartialEq)]
pub enum Command {
    /// Train one agent and write its checkpoint and learning curve.
    Train {
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: AlgorithmId,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train DDPG, TRPO and PPO on every configured seed and write benchmark.csv.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run DAgger variants against an expert checkpoint and write dagger.csv.
    Dagger {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        /// Variants to run (repeatable); defaults to the config's list.
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<DaggerVariant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report the mean and max return of a checkpoint's policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment to evaluate on; defaults to the checkpoint's own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate even if the checkpoint was trained on a different environment.
        #[arg(long)]
        allow_env_mismatch: bool,
    },
    /// Run the determinism, gradient, oracle, soft-update and gate checks.
    Verify,
}

fn parse_algorithm(s: &str) -> Result<AlgorithmId, String> {
    s.parse().map_err(|e: gaitlab_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<DaggerVariant, String> {
    s.parse().map_err(|e: gaitlab_core::Error| e.to_string())
}

/// Parses arguments (including the program name); `--help`, `--version`
/// and malformed input come back as a `clap::Error`.
pub fn parse_cli<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

/// Executes a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { algorithm, config, seed, out } => {
            let cfg = load_config(&config, out)?;
            let artifacts = harness::run_train(&cfg, algorithm, seed, &cfg.output_dir)?;
            let r = &artifacts.report;
            println!(
                "{algorithm} seed {seed}: {} episodes, {} env steps, max {:.2}, mean {:.2}, final-10% mean {:.2}",
                r.episode_returns.len(),
                r.env_steps,
                r.max_return().unwrap_or(f64::NAN),
                r.mean_return().unwrap_or(f64::NAN),
                r.mean_return_final(0.1).unwrap_or(f64::NAN),
            );
            println!("checkpoint: {}", artifacts.checkpoint.display());
            if let Some(curve) = artifacts.curve {
                println!("learning curve: {}", curve.display());
            }
        }
        Command::Benchmark { config, out } => {
            let cfg = load_config(&config, out)?;
            let summary = harness::run_benchmark(&cfg)?;
            let failed = summary.rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("wrote {}", summary.csv.display());
            if failed > 0 {
                bail!("{failed} of {} training runs failed", summary.rows.len());
            }
        }
        Command::Dagger { config, expert, variants, out } => {
            let mut cfg = load_config(&config, out)?;
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            let summary = harness::run_dagger_suite(&cfg, &expert)?;
            let failed = summary.rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("wrote {}", summary.csv.display());
            if failed > 0 {
                bail!("{failed} of {} dagger runs failed", summary.rows.len());
            }
        }
        Command::Eval { checkpoint, config, episodes, seed, allow_env_mismatch } => {
            let env = match config {
                Some(path) => ExperimentConfig::load(&path)?.env,
                None => harness::load_checkpoint(&checkpoint, harness::EnvCheck::Override)?.env,
            };
            let (mean, max) = harness::evaluate_checkpoint(&checkpoint, &env, allow_env_mismatch, episodes, seed)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            println!("mean_return={mean} max_return={max} episodes={episodes}");
        }
        Command::Verify => {
            let outcomes = harness::run_verify();
            for o in &outcomes {
                println!("{} {} ({:.1}s): {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.seconds, o.detail);
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed > 0 {
                bail!("{failed} verification checks failed");
            }
        }
    }
    Ok(())
}
