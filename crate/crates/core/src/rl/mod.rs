//! Expert-training algorithms: DDPG, PPO and TRPO, plus the replay buffer,
//! advantage estimation and Gaussian policy machinery they share.

mod buffer;
pub mod ddpg;
mod gae;
pub mod gaussian;
pub mod ppo;
pub(crate) mod rollout;
pub mod trpo;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use ddpg::{soft_update, DdpgAgent, DdpgConfig, DdpgLosses};
pub use gae::{gae_advantages, normalize_advantages};
pub use gaussian::{gaussian_kl, gaussian_logprob, policy_kl, GaussianPolicy};
pub use ppo::{clipped_surrogate, clipped_surrogate_logp_grad, PpoAgent, PpoConfig, PpoLosses};
pub use rollout::{collect_batch, fit_value, OnPolicyBatch};
pub use trpo::{conjugate_gradient, fisher_vector_product, FisherOperator, TrpoAgent, TrpoConfig, TrpoOutcome};

use crate::env::{Environment, MuscleAction, Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::seeding;

/// Episodes grouped into one row of per-epoch statistics.
pub const EPISODES_PER_EPOCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: MuscleAction,
    pub reward: f64,
    pub next_obs: Observation,
    /// Terminal (the pelvis fell); time-limit truncation is not terminal.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmId {
    Ddpg,
    Trpo,
    Ppo,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 3] = [AlgorithmId::Ddpg, AlgorithmId::Trpo, AlgorithmId::Ppo];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmId::Ddpg => "ddpg",
            AlgorithmId::Trpo => "trpo",
            AlgorithmId::Ppo => "ppo",
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Ok(AlgorithmId::Ddpg),
            "trpo" => Ok(AlgorithmId::Trpo),
            "ppo" => Ok(AlgorithmId::Ppo),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?}; expected ddpg, trpo or ppo"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub episodes: usize,
    pub steps_per_episode: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            episodes: 2000,
            steps_per_episode: 1000,
        }
    }
}

/// Hyperparameters for every algorithm.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfigs {
    pub ddpg: DdpgConfig,
    pub ppo: PpoConfig,
    pub trpo: TrpoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub mean_return: f64,
    pub max_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: AlgorithmId,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    pub epochs: Vec<EpochSummary>,
    pub env_steps: usize,
    pub gradient_updates: usize,
    /// One entry per TRPO policy update.
    pub trust_region: Vec<TrpoOutcome>,
    pub wall_seconds: f64,
}

impl TrainReport {
    fn new(algorithm: AlgorithmId) -> Self {
        Self {
            algorithm,
            episode_returns: Vec::new(),
            episode_lengths: Vec::new(),
            epochs: Vec::new(),
            env_steps: 0,
            gradient_updates: 0,
            trust_region: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    fn record_episode(&mut self, ret: f64, len: usize) {
        self.episode_returns.push(ret);
        self.episode_lengths.push(len);
        self.env_steps += len;
    }

    fn finish(&mut self, started: Instant) {
        self.epochs = self
            .episode_returns
            .chunks(EPISODES_PER_EPOCH)
            .map(|c| EpochSummary {
                mean_return: c.iter().sum::<f64>() / c.len() as f64,
                max_return: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        self.wall_seconds = started.elapsed().as_secs_f64();
    }

    pub fn max_return(&self) -> Option<f64> {
        self.episode_returns.iter().copied().reduce(f64::max)
    }

    pub fn mean_return(&self) -> Option<f64> {
        mean(&self.episode_returns)
    }

    /// Mean over the final `fraction` of episodes (at least one episode).
    pub fn mean_return_final(&self, fraction: f64) -> Option<f64> {
        let n = self.episode_returns.len();
        if n == 0 {
            return None;
        }
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        mean(&self.episode_returns[n - k..])
    }

    /// The report with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// A trained (or freshly initialized) agent of any algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Ddpg(DdpgAgent),
    Ppo(PpoAgent),
    Trpo(TrpoAgent),
}

impl Agent {
    pub fn new(algorithm: AlgorithmId, configs: &AlgorithmConfigs, seed: u64) -> Result<Self> {
        Ok(match algorithm {
            AlgorithmId::Ddpg => Agent::Ddpg(DdpgAgent::new(configs.ddpg.clone(), seed)?),
            AlgorithmId::Ppo => Agent::Ppo(PpoAgent::new(configs.ppo.clone(), seed)?),
            AlgorithmId::Trpo => Agent::Trpo(TrpoAgent::new(configs.trpo.clone(), seed)?),
        })
    }

    pub fn algorithm(&self) -> AlgorithmId {
        match self {
            Agent::Ddpg(_) => AlgorithmId::Ddpg,
            Agent::Ppo(_) => AlgorithmId::Ppo,
            Agent::Trpo(_) => AlgorithmId::Trpo,
        }
    }

    /// The deterministic policy network: the DDPG actor or the Gaussian mean.
    pub fn policy_params(&self) -> &MlpParams {
        match self {
            Agent::Ddpg(a) => &a.actor,
            Agent::Ppo(a) => &a.policy.mean,
            Agent::Trpo(a) => &a.policy.mean,
        }
    }
}

pub(crate) fn episode_seed(seed: u64, episode: usize) -> u64 {
    seeding::mix64(seed ^ seeding::mix64(episode as u64 + 1))
}

/// Trains `algorithm` on `env` for `budget`; a pure function of its
/// arguments apart from the reported wall time.
pub fn train(
    algorithm: AlgorithmId,
    env: &mut Environment,
    budget: Budget,
    seed: u64,
    configs: &AlgorithmConfigs,
) -> Result<(Agent, TrainReport)> {
    let started = Instant::now();
    let mut report = TrainReport::new(algorithm);
    let agent = match Agent::new(algorithm, configs, seed)? {
        Agent::Ddpg(a) => Agent::Ddpg(train_ddpg(a, env, budget, seed, &mut report)?),
        Agent::Ppo(a) => Agent::Ppo(train_on_policy(a, env, budget, seed, &mut report)?),
        Agent::Trpo(a) => Agent::Trpo(train_on_policy(a, env, budget, seed, &mut report)?),
    };
    report.finish(started);
    Ok((agent, report))
}

fn train_ddpg(
    mut agent: DdpgAgent,
    env: &mut Environment,
    budget: Budget,
    seed: u64,
    report: &mut TrainReport,
) -> Result<DdpgAgent> {
    let cfg = agent.config.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut rng = seeding::stream(seed, 1);
    let mut total_steps = 0usize;

    for ep in 0..budget.episodes {
        let mut obs = env.reset(episode_seed(seed, ep));
        let (mut ret, mut len) = (0.0, 0usize);
        while len < budget.steps_per_episode && !env.is_done() {
            let action = if total_steps < cfg.warmup_steps {
                let mut a = [0.0; ACTION_DIM];
                a.iter_mut().for_each(|v| *v = rng.random::<f64>());
                MuscleAction(a)
            } else {
                agent.act(&obs, true, &mut rng)?
            };
            let step = env
                .step_action(&action)
                .map_err(|e| e.context(format!("ddpg episode {ep}, step {len}")))?;
            buffer.push(Transition {
                obs,
                action,
                reward: step.reward,
                next_obs: step.observation,
                done: step.fall,
            });
            obs = step.observation;
            ret += step.reward;
            len += 1;
            total_steps += 1;

            if total_steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(cfg.batch_size, &mut rng)?;
                    match agent.update(&batch) {
                        Ok(_) => report.gradient_updates += 1,
                        Err(Error::Numerical(msg)) => log::warn!("ddpg episode {ep}: {msg}"),
                        Err(e) => return Err(e.context(format!("ddpg episode {ep}"))),
                    }
                }
            }
        }
        report.record_episode(ret, len);
    }
    Ok(agent)
}

/// Shared surface of the two on-policy learners.
trait OnPolicyLearner {
    fn parts(&self) -> (&GaussianPolicy, &MlpParams, f64, f64, usize);
    fn learn<R: Rng + ?Sized>(&mut self, batch: &OnPolicyBatch, rng: &mut R, report: &mut TrainReport) -> Result<()>;
}

impl OnPolicyLearner for PpoAgent {
    fn parts(&self) -> (&GaussianPolicy, &MlpParams, f64, f64, usize) {
        let c = &self.config;
        (&self.policy, &self.value_net, c.gamma, c.gae_lambda, c.episodes_per_batch)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: &OnPolicyBatch, rng: &mut R, report: &mut TrainReport) -> Result<()> {
        self.update(batch, rng)?;
        report.gradient_updates += 1;
        Ok(())
    }
}

impl OnPolicyLearner for TrpoAgent {
    fn parts(&self) -> (&GaussianPolicy, &MlpParams, f64, f64, usize) {
        let c = &self.config;
        (&self.policy, &self.value_net, c.gamma, c.gae_lambda, c.episodes_per_batch)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: &OnPolicyBatch, rng: &mut R, report: &mut TrainReport) -> Result<()> {
        let outcome = match self.update(batch, rng) {
            Ok(o) => o,
            Err(Error::Numerical(msg)) => {
                log::warn!("trpo update skipped: {msg}");
                TrpoOutcome {
                    step_accepted: false,
                    kl_after: 0.0,
                    surrogate_improvement: 0.0,
                    backtracks: 0,
                }
            }
            Err(e) => return Err(e),
        };
        report.trust_region.push(outcome);
        report.gradient_updates += 1;
        Ok(())
    }
}

fn train_on_policy<A: OnPolicyLearner>(
    mut agent: A,
    env: &mut Environment,
    budget: Budget,
    seed: u64,
    report: &mut TrainReport,
) -> Result<A> {
    let mut rng = seeding::stream(seed, 1);
    let mut ep = 0;
    while ep < budget.episodes {
        let (policy, value_net, gamma, lambda, per_batch) = agent.parts();
        let count = per_batch.min(budget.episodes - ep);
        let seeds: Vec<u64> = (ep..ep + count).map(|e| episode_seed(seed, e)).collect();
        let mut batch = collect_batch(env, policy, value_net, &seeds, budget.steps_per_episode, gamma, lambda, &mut rng)
            .map_err(|e| e.context(format!("{} episodes {ep}..{}", report.algorithm, ep + count)))?;
        for (&r, &l) in batch.episode_returns.iter().zip(&batch.episode_lengths) {
            report.record_episode(r, l);
        }
        batch.normalize_advantages();
        agent
            .learn(&batch, &mut rng, report)
            .map_err(|e| e.context(format!("{} update after episode {}", report.algorithm, ep + count)))?;
        ep += count;
    }
    Ok(agent)
}
