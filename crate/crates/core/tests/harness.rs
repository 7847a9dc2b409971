use std::fs;

use gaitlab_core::harness::report::{write_benchmark_csv, BenchmarkRow, ERROR_MARKER};
use gaitlab_core::harness::run::{checkpoint_file_name, curve_file_name, BENCHMARK_FILE, DAGGER_FILE};
use gaitlab_core::harness::verify::tiny_experiment;
use gaitlab_core::harness::{
    emit_learning_curve, evaluate_checkpoint, load_checkpoint, run_benchmark, run_dagger_suite, run_train,
    running_mean, save_checkpoint, EnvCheck, ExperimentConfig, BENCHMARK_HEADER, CURVE_HEADER, DAGGER_HEADER,
};
use gaitlab_core::{AlgorithmId, DaggerVariant, EnvConfig, Error, TrainReport};
use proptest::prelude::*;

fn report_with(returns: Vec<f64>) -> TrainReport {
    TrainReport {
        algorithm: AlgorithmId::Ppo,
        episode_lengths: vec![1; returns.len()],
        env_steps: returns.len(),
        episode_returns: returns,
        epochs: Vec::new(),
        gradient_updates: 0,
        trust_region: Vec::new(),
        wall_seconds: 0.25,
    }
}

#[test]
fn curve_running_mean_uses_the_trailing_hundred() {
    let returns: Vec<f64> = (1..=200).map(|i| ((i * 7919) % 113) as f64 - 40.5).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    emit_learning_curve(&report_with(returns.clone()), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 200);

    let direct: f64 = returns[50..150].iter().sum::<f64>() / 100.0;
    assert_eq!(rows[149][0], 150.0);
    assert!((rows[149][2] - direct).abs() < 1e-9);
    assert_eq!(rows[0][2], returns[0]);
    let first_ten: f64 = returns[..10].iter().sum::<f64>() / 10.0;
    assert!((rows[9][2] - first_ten).abs() < 1e-12);

    assert!(matches!(emit_learning_curve(&report_with(vec![]), &path), Err(Error::Usage(_))));
}

#[test]
fn failed_benchmark_rows_keep_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(BENCHMARK_FILE);
    let rows = vec![
        BenchmarkRow { algorithm: AlgorithmId::Trpo, seed: 3, outcome: Ok(report_with(vec![194.0, 43.0])) },
        BenchmarkRow { algorithm: AlgorithmId::Ppo, seed: 3, outcome: Err("diverged".into()) },
    ];
    write_benchmark_csv(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], BENCHMARK_HEADER);
    assert_eq!(lines[1], "TRPO,3,194,118.5,43,2,0.250");
    assert_eq!(lines[2], format!("PPO,3,{0},{0},{0},{0},{0}", ERROR_MARKER));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.seeds = vec![4];
    let summary = run_benchmark(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert!(summary.rows.iter().all(|r| r.outcome.is_ok()));
    let bench = fs::read_to_string(dir.path().join(BENCHMARK_FILE)).unwrap();
    let lines: Vec<&str> = bench.lines().collect();
    assert_eq!(lines[0], BENCHMARK_HEADER);
    let algs: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(algs, vec!["DDPG", "TRPO", "PPO"]);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 7);
        assert!(!line.contains('e') && !line.contains("NaN"), "{line}");
    }
    for alg in AlgorithmId::ALL {
        assert!(dir.path().join(curve_file_name(alg, 4)).exists());
        assert!(dir.path().join(checkpoint_file_name(alg, 4)).exists());
    }

    let expert = dir.path().join(checkpoint_file_name(AlgorithmId::Ddpg, 4));
    let dagger = run_dagger_suite(&cfg, &expert).unwrap();
    assert_eq!(dagger.rows.len(), 4);
    let text = fs::read_to_string(dir.path().join(DAGGER_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], DAGGER_HEADER);
    assert_eq!(lines.len(), 1 + 4 * cfg.dagger.iterations);
    for line in &lines[1..] {
        let converged = line.rsplit(',').next().unwrap();
        assert!(converged == "true" || converged == "false");
    }
    let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants.iter().filter(|v| **v == DaggerVariant::Vanilla.as_str()).count(), cfg.dagger.iterations);
}

#[test]
fn checkpoints_roundtrip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    for alg in AlgorithmId::ALL {
        let artifacts = run_train(&cfg, alg, 1, dir.path()).unwrap();
        let first = fs::read(&artifacts.checkpoint).unwrap();
        let loaded = load_checkpoint(&artifacts.checkpoint, EnvCheck::Require(&cfg.env)).unwrap();
        let again = dir.path().join("again.json");
        save_checkpoint(&again, &loaded.agent, &loaded.env).unwrap();
        assert_eq!(first, fs::read(&again).unwrap(), "{alg}");
    }
}

#[test]
fn evaluation_checks_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    let artifacts = run_train(&cfg, AlgorithmId::Ddpg, 2, dir.path()).unwrap();
    let (mean, max) = evaluate_checkpoint(&artifacts.checkpoint, &cfg.env, false, 2, 0).unwrap();
    assert!(mean <= max);
    let other = EnvConfig { target_velocity: 2.0, ..cfg.env.clone() };
    let err = evaluate_checkpoint(&artifacts.checkpoint, &other, false, 2, 0).unwrap_err();
    assert!(matches!(err.root(), Error::Compatibility(_)));
    evaluate_checkpoint(&artifacts.checkpoint, &other, true, 2, 0).unwrap();

    let text = fs::read_to_string(&artifacts.checkpoint).unwrap();
    let bad = dir.path().join("cut.json");
    fs::write(&bad, &text[..text.len() - 40]).unwrap();
    let err = load_checkpoint(&bad, EnvCheck::Override).unwrap_err();
    assert!(matches!(err.root(), Error::MalformedCheckpoint(_)));
}

#[test]
fn config_files_load_with_nested_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(
        &path,
        "seeds = [3, 4]\noutput_dir = \"out\"\nvariants = [\"reward_gated\"]\n\n[env]\nmax_steps = 300\n\n[budget]\nepisodes = 12\n\n[algorithms.ddpg]\ntau = 0.01\n\n[dagger]\nrollout_horizon = 25\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.seeds, vec![3, 4]);
    assert_eq!(cfg.env.max_steps, 300);
    assert_eq!(cfg.budget.episodes, 12);
    assert_eq!(cfg.budget.steps_per_episode, 1000);
    assert_eq!(cfg.algorithms.ddpg.tau, 0.01);
    assert_eq!(cfg.dagger.rollout_horizon, Some(25));
    assert_eq!(cfg.variants, vec![DaggerVariant::RewardGated]);
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(), cfg);

    fs::write(&path, "[algorithms.ddpg]\ntua = 0.01\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path).unwrap_err().root(), Error::Config(_)));
    fs::write(&path, "seeds = []\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path).unwrap_err().root(), Error::Config(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn running_mean_matches_direct_windows(values in prop::collection::vec(-100.0f64..100.0, 1..250), window in 1usize..120) {
        let means = running_mean(&values, window);
        prop_assert_eq!(means.len(), values.len());
        for (i, m) in means.iter().enumerate() {
            let start = (i + 1).saturating_sub(window);
            let direct = values[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
            prop_assert!((m - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_returns_give_a_constant_mean(c in -50.0f64..50.0, n in 1usize..300) {
        prop_assert!(running_mean(&vec![c; n], 100).iter().all(|m| (m - c).abs() < 1e-12));
    }
}
