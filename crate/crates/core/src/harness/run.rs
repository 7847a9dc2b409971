//! Benchmark, single-run training, DAgger suite and checkpoint evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, save_checkpoint, EnvCheck};
use super::config::ExperimentConfig;
use super::report::{emit_learning_curve, write_benchmark_csv, write_dagger_csv, BenchmarkRow, DaggerRow};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::imitation::{evaluate, run_dagger, DaggerConfig, DaggerVariant, Policy};
use crate::rl::{train, AlgorithmId, TrainReport};

pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const DAGGER_FILE: &str = "dagger.csv";

pub fn curve_file_name(algorithm: AlgorithmId, seed: u64) -> String {
    format!("curve_{algorithm}_{seed}.csv")
}

pub fn checkpoint_file_name(algorithm: AlgorithmId, seed: u64) -> String {
    format!("{algorithm}_{seed}.json")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub curve: Option<PathBuf>,
}

/// Trains one agent and writes its checkpoint and learning curve to `out`.
pub fn run_train(cfg: &ExperimentConfig, algorithm: AlgorithmId, seed: u64, out: &Path) -> Result<TrainArtifacts> {
    ensure_dir(out)?;
    let mut env = Environment::new(cfg.env.clone())?;
    let (agent, report) = train(algorithm, &mut env, cfg.budget, seed, &cfg.algorithms)?;
    let checkpoint = out.join(checkpoint_file_name(algorithm, seed));
    save_checkpoint(&checkpoint, &agent, &cfg.env)?;
    let curve = if report.episode_returns.is_empty() {
        None
    } else {
        let path = out.join(curve_file_name(algorithm, seed));
        emit_learning_curve(&report, &path)?;
        Some(path)
    };
    Ok(TrainArtifacts { report, checkpoint, curve })
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub rows: Vec<BenchmarkRow>,
    pub csv: PathBuf,
}

/// Trains every algorithm on every seed. A failed run becomes an error row
/// and does not stop the others.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkSummary> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut rows = Vec::new();
    for algorithm in AlgorithmId::ALL {
        for &seed in &cfg.seeds {
            log::info!("benchmark: training {algorithm} with seed {seed}");
            let outcome = run_train(cfg, algorithm, seed, out).map(|a| a.report).map_err(|e| {
                log::error!("benchmark: {algorithm} seed {seed} failed: {e}");
                e.to_string()
            });
            rows.push(BenchmarkRow { algorithm, seed, outcome });
        }
    }
    let csv = out.join(BENCHMARK_FILE);
    write_benchmark_csv(&csv, &rows)?;
    Ok(BenchmarkSummary { rows, csv })
}

#[derive(Debug, Clone)]
pub struct DaggerSuiteSummary {
    pub rows: Vec<DaggerRow>,
    pub csv: PathBuf,
}

/// Loads the expert's deterministic policy from a checkpoint trained on `env`.
pub fn load_expert(path: &Path, cfg: &ExperimentConfig) -> Result<Policy> {
    let ckpt = load_checkpoint(path, EnvCheck::Require(&cfg.env))?;
    Policy::new(ckpt.agent.policy_params().clone())
}

/// Runs each configured variant on each seed for the full iteration budget.
pub fn run_dagger_suite(cfg: &ExperimentConfig, expert_checkpoint: &Path) -> Result<DaggerSuiteSummary> {
    cfg.validate()?;
    let expert = load_expert(expert_checkpoint, cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let mut env = Environment::new(cfg.env.clone())?;
    let mut rows = Vec::new();
    let mut variants: Vec<DaggerVariant> = cfg.variants.clone();
    variants.sort();
    variants.dedup();
    for variant in variants {
        let dagger = DaggerConfig { variant, early_stop: false, ..cfg.dagger.clone() };
        for &seed in &cfg.seeds {
            log::info!("dagger suite: {variant} with seed {seed}");
            let outcome = run_dagger(&mut env, &expert, dagger.clone(), seed)
                .map(|run| run.reports)
                .map_err(|e| {
                    log::error!("dagger suite: {variant} seed {seed} failed: {e}");
                    e.to_string()
                });
            rows.push(DaggerRow { variant, seed, outcome });
        }
    }
    let csv = cfg.output_dir.join(DAGGER_FILE);
    write_dagger_csv(&csv, &rows)?;
    Ok(DaggerSuiteSummary { rows, csv })
}

/// Mean and max return of a checkpoint's deterministic policy on `env`.
/// Unless `allow_env_mismatch` is set, the checkpoint must have been trained
/// on that environment.
pub fn evaluate_checkpoint(
    path: &Path,
    env: &EnvConfig,
    allow_env_mismatch: bool,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let check = if allow_env_mismatch { EnvCheck::Override } else { EnvCheck::Require(env) };
    let ckpt = load_checkpoint(path, check)?;
    let policy = Policy::new(ckpt.agent.policy_params().clone())?;
    evaluate(&policy, &mut Environment::new(env.clone())?, episodes, seed)
}
