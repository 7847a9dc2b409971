//! Imitation of a trained expert by a fresh learner: DAgger with reward
//! gating, return gating and epsilon-greedy execution variants.

mod dagger;
mod labels;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dagger::{dagger_iteration, fit_policy, run_dagger, DaggerRun, RegressionLoss};
pub use labels::{label_return_gated, label_reward_gated, label_vanilla, select_action_epsilon, GateDecision};

use crate::env::{Environment, MuscleAction, Observation, OracleController, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Mat, MlpParams, OutputActivation};
use crate::seeding;

/// Anything that maps observations to muscle excitations deterministically.
pub trait Controller {
    fn act(&self, obs: &Observation) -> Result<MuscleAction>;
}

impl Controller for OracleController {
    fn act(&self, obs: &Observation) -> Result<MuscleAction> {
        Ok(self.action(obs))
    }
}

/// A deterministic network policy with sigmoid outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    params: MlpParams,
}

impl Policy {
    pub fn new(params: MlpParams) -> Result<Self> {
        if params.input_dim() != OBS_DIM {
            return Err(Error::shape("policy input", OBS_DIM, params.input_dim()));
        }
        if params.output_dim() != ACTION_DIM {
            return Err(Error::shape("policy output", ACTION_DIM, params.output_dim()));
        }
        if params.output_activation() != OutputActivation::UnitInterval {
            return Err(Error::Config("policy output must be squashed into (0, 1)".into()));
        }
        Ok(Self { params })
    }

    /// A freshly initialized policy with the given hidden widths.
    pub fn init(hidden: &[usize], seed: u64) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(OBS_DIM)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(ACTION_DIM))
            .collect();
        Self::new(MlpParams::init(&dims, OutputActivation::UnitInterval, seed)?)
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn into_params(self) -> MlpParams {
        self.params
    }
}

impl Controller for Policy {
    fn act(&self, obs: &Observation) -> Result<MuscleAction> {
        MuscleAction::from_slice(&self.params.forward(obs.as_slice())?)
    }
}

/// Append-only (observation, label) pairs with iteration boundaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDataset {
    observations: Vec<Observation>,
    labels: Vec<MuscleAction>,
    boundaries: Vec<usize>,
}

impl AggregatedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation, label: MuscleAction) {
        self.observations.push(obs);
        self.labels.push(label);
    }

    /// Marks the end of an aggregation round.
    pub fn close_iteration(&mut self) {
        self.boundaries.push(self.observations.len());
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Dataset size at the end of each closed iteration.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn labels(&self) -> &[MuscleAction] {
        &self.labels
    }

    pub(crate) fn to_matrices(&self) -> (Mat, Mat) {
        let n = self.len();
        let mut x = Mat::zeros(n, OBS_DIM);
        let mut y = Mat::zeros(n, ACTION_DIM);
        for i in 0..n {
            x.row_mut(i).copy_from_slice(self.observations[i].as_slice());
            y.row_mut(i).copy_from_slice(self.labels[i].as_slice());
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaggerVariant {
    Vanilla,
    RewardGated,
    ReturnGated,
    EpsilonGreedy,
}

impl DaggerVariant {
    pub const ALL: [DaggerVariant; 4] = [
        DaggerVariant::Vanilla,
        DaggerVariant::RewardGated,
        DaggerVariant::ReturnGated,
        DaggerVariant::EpsilonGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DaggerVariant::Vanilla => "vanilla",
            DaggerVariant::RewardGated => "reward_gated",
            DaggerVariant::ReturnGated => "return_gated",
            DaggerVariant::EpsilonGreedy => "epsilon_greedy",
        }
    }
}

impl fmt::Display for DaggerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DaggerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        DaggerVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown dagger variant {s:?}; expected vanilla, reward_gated, return_gated or epsilon_greedy"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaggerConfig {
    pub variant: DaggerVariant,
    pub iterations: usize,
    pub trajectories_per_iteration: usize,
    pub regression_epochs: usize,
    pub regression_lr: f64,
    pub regression_minibatch: usize,
    /// Probability of executing the expert action (epsilon-greedy only).
    pub epsilon: f64,
    /// Return-gate horizon in steps; absent means to the end of the episode.
    pub rollout_horizon: Option<usize>,
    pub convergence_fraction: f64,
    pub eval_episodes: usize,
    pub learner_hidden: Vec<usize>,
    /// Stop as soon as an iteration reports convergence.
    pub early_stop: bool,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            variant: DaggerVariant::Vanilla,
            iterations: 5,
            trajectories_per_iteration: 5,
            regression_epochs: 200,
            regression_lr: 1e-3,
            regression_minibatch: 256,
            epsilon: 0.1,
            rollout_horizon: None,
            convergence_fraction: 0.9,
            eval_episodes: 20,
            learner_hidden: vec![64, 64],
            early_stop: true,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("dagger: {msg}")));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.convergence_fraction > 0.0 && self.convergence_fraction <= 1.0) {
            return bad("convergence_fraction must lie in (0, 1]");
        }
        if self.trajectories_per_iteration == 0 {
            return bad("trajectories_per_iteration must be at least 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1");
        }
        if self.regression_minibatch == 0 {
            return bad("regression_minibatch must be at least 1");
        }
        if !(self.regression_lr.is_finite() && self.regression_lr >= 0.0) {
            return bad("regression_lr must be finite and non-negative");
        }
        if self.rollout_horizon == Some(0) {
            return bad("rollout_horizon must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub dataset_size: usize,
    pub learner_mean: f64,
    pub learner_max: f64,
    pub expert_mean: f64,
    /// Steps taken this iteration by rollouts and counterfactual branches;
    /// evaluation episodes are not counted.
    pub iteration_env_steps: usize,
    /// Running total of `iteration_env_steps`.
    pub env_steps: usize,
    /// Fraction of visited states whose label or executed action came from the expert.
    pub expert_fraction: f64,
    pub regression: RegressionLoss,
    pub converged: bool,
}

/// Runs `episodes` deterministic episodes and returns (mean, max) return.
pub fn evaluate(policy: &dyn Controller, env: &mut Environment, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for ep in 0..episodes {
        let mut obs = env.reset(seeding::mix64(seed ^ seeding::mix64(ep as u64)));
        let mut ret = 0.0;
        while !env.is_done() {
            let a = policy.act(&obs).map_err(|e| e.context(format!("evaluation episode {ep}")))?;
            let step = env.step_action(&a)?;
            ret += step.reward;
            obs = step.observation;
        }
        sum += ret;
        max = max.max(ret);
    }
    Ok((sum / episodes as f64, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    #[test]
    fn zero_policy_labels_half() {
        let p = Policy::new(MlpParams::zeros(&[4, 8, 19], OutputActivation::UnitInterval).unwrap()).unwrap();
        let obs = Observation([1.0, 0.2, -0.4, 3.4]);
        let a = label_vanilla(&p, &obs).unwrap();
        assert_eq!(a, MuscleAction::uniform(0.5));
        assert_eq!(label_vanilla(&p, &obs).unwrap(), a);
    }

    #[test]
    fn policy_rejects_wrong_shapes() {
        let wrong_out = MlpParams::zeros(&[4, 8, 18], OutputActivation::UnitInterval).unwrap();
        assert!(Policy::new(wrong_out).is_err());
        let linear = MlpParams::zeros(&[4, 8, 19], OutputActivation::Identity).unwrap();
        assert!(Policy::new(linear).is_err());
    }

    #[test]
    fn evaluate_single_episode_and_determinism() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        let p = Policy::init(&[8], 3).unwrap();
        let (mean, max) = evaluate(&p, &mut env, 1, 9).unwrap();
        assert_eq!(mean, max);
        assert_eq!(evaluate(&p, &mut env, 3, 4).unwrap(), evaluate(&p, &mut env, 3, 4).unwrap());
        assert!(evaluate(&p, &mut env, 0, 4).is_err());
    }

    #[test]
    fn oracle_evaluation_matches_direct_rollout() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        let oracle = OracleController::new(env.mix().clone());
        let mut obs = env.reset(0);
        let mut direct = 0.0;
        while !env.is_done() {
            let s = env.step_action(&oracle.action(&obs)).unwrap();
            direct += s.reward;
            obs = s.observation;
        }
        let (mean, max) = evaluate(&oracle, &mut env, 4, 1).unwrap();
        assert_eq!(mean, direct);
        assert_eq!(max, direct);
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in DaggerVariant::ALL {
            assert_eq!(v.as_str().parse::<DaggerVariant>().unwrap(), v);
        }
        assert_eq!("Reward-Gated".parse::<DaggerVariant>().unwrap(), DaggerVariant::RewardGated);
        assert!("beta".parse::<DaggerVariant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DaggerConfig::default().validate().is_ok());
        for bad in [
            DaggerConfig { epsilon: 1.5, ..Default::default() },
            DaggerConfig { iterations: 0, ..Default::default() },
            DaggerConfig { convergence_fraction: 0.0, ..Default::default() },
            DaggerConfig { rollout_horizon: Some(0), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
