//! Aggregation rounds and the learner's supervised regression.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{label_return_gated, label_reward_gated, select_action_epsilon};
use super::{evaluate, AggregatedDataset, Controller, DaggerConfig, DaggerVariant, IterationReport, Policy};
use crate::env::{Environment, ACTION_DIM};
use crate::error::Result;
use crate::nn::{adam_update, AdamState, Mat};
use crate::rl::rollout::gather_rows;
use crate::seeding;

/// Full-dataset mean squared error before and after retraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionLoss {
    pub start: f64,
    pub end: f64,
}

fn mse(policy: &Policy, x: &Mat, y: &Mat) -> Result<f64> {
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let out = policy.params().forward_batch(x)?.into_output();
    let sq: f64 = out.data().iter().zip(y.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sq / (x.rows() * ACTION_DIM) as f64)
}

/// Mean-squared-error regression of the learner onto the aggregated labels
/// with shuffled minibatches and a fresh Adam state.
pub fn fit_policy<R: Rng + ?Sized>(
    learner: &mut Policy,
    dataset: &AggregatedDataset,
    epochs: usize,
    minibatch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<RegressionLoss> {
    let (x, y) = dataset.to_matrices();
    let start = mse(learner, &x, &y)?;
    let mut opt = AdamState::for_params(learner.params());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(minibatch.max(1)) {
            let xb = gather_rows(&x, chunk);
            let yb = gather_rows(&y, chunk);
            let cache = learner.params().forward_batch(&xb)?;
            let scale = 2.0 / (chunk.len() * ACTION_DIM) as f64;
            let mut up = cache.output().clone();
            let mut loss = 0.0;
            for (u, t) in up.data_mut().iter_mut().zip(yb.data()) {
                let err = *u - t;
                loss += err * err;
                *u = scale * err;
            }
            let (mut grads, _) = learner.params().backward_batch(&cache, &up)?;
            grads.loss = loss / (chunk.len() * ACTION_DIM) as f64;
            adam_update(learner.params_mut(), &grads, &mut opt, lr)?;
        }
    }
    let end = mse(learner, &x, &y)?;
    Ok(RegressionLoss { start, end })
}

/// State of one DAgger run: the learner, its aggregated data and the
/// reports of the iterations completed so far.
#[derive(Debug, Clone)]
pub struct DaggerRun {
    pub config: DaggerConfig,
    pub learner: Policy,
    pub dataset: AggregatedDataset,
    pub reports: Vec<IterationReport>,
    pub expert_mean: f64,
    pub expert_max: f64,
    env_steps: usize,
    eval_seed: u64,
    rng: ChaCha8Rng,
}

impl DaggerRun {
    /// Initializes a learner from `seed` and measures the expert.
    pub fn new(env: &mut Environment, expert: &dyn Controller, config: DaggerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let learner = Policy::init(&config.learner_hidden, seeding::mix64(seed ^ 0x6c6561726e))?;
        let eval_seed = seeding::mix64(seed ^ 0x6576616c);
        let (expert_mean, expert_max) = evaluate(expert, env, config.eval_episodes, eval_seed)
            .map_err(|e| e.context("expert evaluation"))?;
        Ok(Self {
            config,
            learner,
            dataset: AggregatedDataset::new(),
            reports: Vec::new(),
            expert_mean,
            expert_max,
            env_steps: 0,
            eval_seed,
            rng: seeding::stream(seed, 2),
        })
    }

    pub fn converged(&self) -> bool {
        self.reports.last().is_some_and(|r| r.converged)
    }
}

/// One aggregation round: roll out the learner, label every visited state,
/// retrain on the whole dataset and evaluate.
pub fn dagger_iteration(env: &mut Environment, expert: &dyn Controller, run: &mut DaggerRun) -> Result<IterationReport> {
    let cfg = run.config.clone();
    let iteration = run.reports.len() + 1;
    let mut steps = 0usize;
    let mut from_expert = 0usize;
    let before = run.dataset.len();

    for traj in 0..cfg.trajectories_per_iteration {
        let ctx = |t: usize| format!("dagger iteration {iteration}, trajectory {traj}, step {t}");
        let mut obs = env.reset(run.rng.random());
        let mut t = 0;
        while !env.is_done() {
            let a_target = run.learner.act(&obs).map_err(|e| e.context(ctx(t)))?;
            let a_expert = expert.act(&obs).map_err(|e| e.context(ctx(t)))?;
            let (label, executed, expert_used) = match cfg.variant {
                DaggerVariant::Vanilla => (a_expert, a_target, true),
                DaggerVariant::EpsilonGreedy => {
                    let (exec, took) = select_action_epsilon(&a_expert, &a_target, cfg.epsilon, &mut run.rng);
                    (a_expert, exec, took)
                }
                DaggerVariant::RewardGated | DaggerVariant::ReturnGated => {
                    let snap = env.snapshot();
                    let d = if cfg.variant == DaggerVariant::RewardGated {
                        label_reward_gated(env, &snap, &a_expert, &a_target)
                    } else {
                        label_return_gated(env, &snap, &a_expert, &a_target, expert, &run.learner, cfg.rollout_horizon)
                    }
                    .map_err(|e| e.context(ctx(t)))?;
                    steps += d.env_steps;
                    (d.label, a_target, d.expert_won)
                }
            };
            run.dataset.push(obs, label);
            from_expert += usize::from(expert_used);
            obs = env.step_action(&executed).map_err(|e| e.context(ctx(t)))?.observation;
            steps += 1;
            t += 1;
        }
    }
    run.dataset.close_iteration();
    let visited = run.dataset.len() - before;

    let regression = fit_policy(
        &mut run.learner,
        &run.dataset,
        cfg.regression_epochs,
        cfg.regression_minibatch,
        cfg.regression_lr,
        &mut run.rng,
    )
    .map_err(|e| e.context(format!("dagger iteration {iteration}, regression")))?;

    let (learner_mean, learner_max) = evaluate(&run.learner, env, cfg.eval_episodes, run.eval_seed)?;
    run.env_steps += steps;
    let report = IterationReport {
        iteration,
        dataset_size: run.dataset.len(),
        learner_mean,
        learner_max,
        expert_mean: run.expert_mean,
        iteration_env_steps: steps,
        env_steps: run.env_steps,
        expert_fraction: from_expert as f64 / visited.max(1) as f64,
        regression,
        converged: learner_mean >= cfg.convergence_fraction * run.expert_mean,
    };
    run.reports.push(report.clone());
    Ok(report)
}

/// Runs up to `config.iterations` rounds, stopping early on convergence if
/// `config.early_stop` is set.
pub fn run_dagger(env: &mut Environment, expert: &dyn Controller, config: DaggerConfig, seed: u64) -> Result<DaggerRun> {
    let mut run = DaggerRun::new(env, expert, config, seed)?;
    for _ in 0..run.config.iterations {
        let r = dagger_iteration(env, expert, &mut run)?;
        log::info!(
            "{} iteration {}: learner {:.1} / expert {:.1}, {} samples, {} env steps",
            run.config.variant,
            r.iteration,
            r.learner_mean,
            r.expert_mean,
            r.dataset_size,
            r.env_steps
        );
        if r.learner_mean > r.expert_mean {
            log::info!(
                "{} iteration {}: learner outperforms the expert ({:.1} > {:.1}); roles could be exchanged",
                run.config.variant,
                r.iteration,
                r.learner_mean,
                r.expert_mean
            );
        }
        if r.converged && run.config.early_stop {
            break;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, OracleController};

    fn quick(variant: DaggerVariant) -> DaggerConfig {
        DaggerConfig {
            variant,
            iterations: 2,
            trajectories_per_iteration: 1,
            regression_epochs: 3,
            eval_episodes: 1,
            learner_hidden: vec![8],
            early_stop: false,
            rollout_horizon: Some(3),
            ..Default::default()
        }
    }

    fn short_env() -> Environment {
        Environment::new(EnvConfig { max_steps: 40, ..Default::default() }).unwrap()
    }

    #[test]
    fn dataset_grows_by_visited_states() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        for variant in DaggerVariant::ALL {
            let run = run_dagger(&mut env, &oracle, quick(variant), 5).unwrap();
            assert_eq!(run.reports.len(), 2);
            assert_eq!(run.dataset.boundaries(), &[40, 80]);
            assert_eq!(run.reports[1].dataset_size, 80);
            assert!(run.reports[1].env_steps > run.reports[0].env_steps);
        }
    }

    #[test]
    fn counterfactual_steps_are_counted() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        let r = &run_dagger(&mut env, &oracle, quick(DaggerVariant::Vanilla), 1).unwrap().reports[0];
        assert_eq!(r.iteration_env_steps, 40);
        let r = &run_dagger(&mut env, &oracle, quick(DaggerVariant::RewardGated), 1).unwrap().reports[0];
        assert_eq!(r.iteration_env_steps, 40 * 3);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        for variant in DaggerVariant::ALL {
            let a = run_dagger(&mut env, &oracle, quick(variant), 8).unwrap();
            let b = run_dagger(&mut env, &oracle, quick(variant), 8).unwrap();
            assert_eq!(a.reports, b.reports);
            assert_eq!(a.learner, b.learner);
        }
    }

    #[test]
    fn self_imitation_starts_at_zero_loss() {
        let mut env = short_env();
        let expert = Policy::init(&[8], 77).unwrap();
        let mut run = DaggerRun::new(&mut env, &expert, quick(DaggerVariant::Vanilla), 0).unwrap();
        run.learner = expert.clone();
        let r = dagger_iteration(&mut env, &expert, &mut run).unwrap();
        assert!(r.regression.start < 1e-20);
        assert!((r.learner_mean - r.expert_mean).abs() < 1e-4 * r.expert_mean.abs().max(1.0), "{r:?}");
    }

    #[test]
    fn single_iteration_yields_one_report() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        let cfg = DaggerConfig { iterations: 1, ..quick(DaggerVariant::Vanilla) };
        assert_eq!(run_dagger(&mut env, &oracle, cfg, 2).unwrap().reports.len(), 1);
    }

    #[test]
    fn early_stop_on_easy_threshold() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        let cfg = DaggerConfig {
            iterations: 4,
            early_stop: true,
            convergence_fraction: 1e-9,
            ..quick(DaggerVariant::Vanilla)
        };
        let run = run_dagger(&mut env, &oracle, cfg, 2).unwrap();
        if run.reports[0].converged {
            assert_eq!(run.reports.len(), 1);
        }
    }

    #[test]
    fn regression_reduces_loss() {
        let mut env = short_env();
        let oracle = OracleController::new(env.mix().clone());
        let cfg = DaggerConfig { regression_epochs: 200, iterations: 1, ..quick(DaggerVariant::Vanilla) };
        let r = &run_dagger(&mut env, &oracle, cfg, 3).unwrap().reports[0];
        assert!(r.regression.end < 0.5 * r.regression.start, "{:?}", r.regression);
    }
}
