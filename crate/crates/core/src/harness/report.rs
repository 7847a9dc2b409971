//! CSV outputs. Numbers use Rust's `Display` for `f64`: plain decimal with
//! a `.` separator and no exponent.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imitation::{DaggerVariant, IterationReport};
use crate::rl::{AlgorithmId, TrainReport};

pub const BENCHMARK_HEADER: &str =
    "algorithm,seed,max_reward,mean_reward_full,mean_reward_final10pct,env_steps,wall_seconds";
pub const DAGGER_HEADER: &str =
    "variant,seed,iteration,dataset_size,learner_mean,learner_max,expert_mean,env_steps,converged";
pub const CURVE_HEADER: &str = "episode,return,running_mean_100";

/// Written in place of every value of a row whose run failed.
pub const ERROR_MARKER: &str = "ERROR";

/// Trailing window for the learning-curve running mean.
pub const CURVE_WINDOW: usize = 100;

/// Trailing mean over up to `window` entries ending at each position.
pub fn running_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let w = &values[(i + 1).saturating_sub(window)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub algorithm: AlgorithmId,
    pub seed: u64,
    /// The training report, or the error message of a failed run.
    pub outcome: Result<TrainReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerRow {
    pub variant: DaggerVariant,
    pub seed: u64,
    pub outcome: Result<Vec<IterationReport>, String>,
}

fn writer(path: &Path, header: &str) -> Result<csv::Writer<std::fs::File>> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, path))?;
    w.write_record(header.split(',')).map_err(|e| csv_error(e, path))?;
    Ok(w)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let io = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    Error::from(io).context(format!("writing {}", path.display()))
}

fn errors(n: usize) -> Vec<String> {
    vec![ERROR_MARKER.to_string(); n]
}

pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = writer(path, BENCHMARK_HEADER)?;
    for row in rows {
        let mut record = vec![row.algorithm.as_str().to_ascii_uppercase(), row.seed.to_string()];
        match &row.outcome {
            Ok(r) => record.extend([
                fmt_opt(r.max_return()),
                fmt_opt(r.mean_return()),
                fmt_opt(r.mean_return_final(0.1)),
                r.env_steps.to_string(),
                format!("{:.3}", r.wall_seconds),
            ]),
            Err(_) => record.extend(errors(5)),
        }
        w.write_record(&record).map_err(|e| csv_error(e, path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dagger_csv(path: &Path, rows: &[DaggerRow]) -> Result<()> {
    let mut w = writer(path, DAGGER_HEADER)?;
    for row in rows {
        let lead = [row.variant.as_str().to_string(), row.seed.to_string()];
        match &row.outcome {
            Ok(reports) => {
                for r in reports {
                    let mut record = lead.to_vec();
                    record.extend([
                        r.iteration.to_string(),
                        r.dataset_size.to_string(),
                        r.learner_mean.to_string(),
                        r.learner_max.to_string(),
                        r.expert_mean.to_string(),
                        r.env_steps.to_string(),
                        r.converged.to_string(),
                    ]);
                    w.write_record(&record).map_err(|e| csv_error(e, path))?;
                }
            }
            Err(_) => {
                let mut record = lead.to_vec();
                record.extend(errors(7));
                w.write_record(&record).map_err(|e| csv_error(e, path))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-episode returns with a trailing 100-episode running mean; episodes
/// are numbered from 1.
pub fn emit_learning_curve(report: &TrainReport, path: &Path) -> Result<()> {
    if report.episode_returns.is_empty() {
        return Err(Error::Usage("cannot write a learning curve for an empty report".into()));
    }
    let mut w = writer(path, CURVE_HEADER)?;
    let means = running_mean(&report.episode_returns, CURVE_WINDOW);
    for (i, (ret, mean)) in report.episode_returns.iter().zip(&means).enumerate() {
        w.write_record([(i + 1).to_string(), ret.to_string(), mean.to_string()])
            .map_err(|e| csv_error(e, path))?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn running_mean_windows() {
        assert_eq!(running_mean(&[4.0], 100), vec![4.0]);
        assert_eq!(running_mean(&[2.0; 7], 3), vec![2.0; 7]);
        assert_eq!(running_mean(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn header_is_written_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        write_benchmark_csv(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{BENCHMARK_HEADER}\n"));
        let path = dir.path().join("d.csv");
        write_dagger_csv(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{DAGGER_HEADER}\n"));
    }

    #[test]
    fn failed_rows_carry_the_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let row = BenchmarkRow { algorithm: AlgorithmId::Trpo, seed: 4, outcome: Err("diverged".into()) };
        write_benchmark_csv(&path, &[row]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "TRPO,4,ERROR,ERROR,ERROR,ERROR,ERROR");
    }

    #[test]
    fn floats_are_plain_decimal() {
        assert_eq!(1e-7f64.to_string(), "0.0000001");
        assert_eq!(12345678.5f64.to_string(), "12345678.5");
    }
}
