//! Deep deterministic policy gradient: a deterministic actor trained through
//! a learned Q critic, with replayed off-policy transitions and slowly
//! tracking target copies of both networks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::env::{MuscleAction, Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamState, Mat, MlpParams, OutputActivation};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Uniformly random environment steps before the first update.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    /// Multiplies rewards before they enter the critic target.
    pub reward_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            noise_sigma: 0.1,
            batch_size: 128,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            updates_per_step: 1,
            reward_scale: 1.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("ddpg tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("ddpg gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("ddpg batch_size and buffer_capacity must be positive".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("ddpg noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub config: DdpgConfig,
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub target_actor: MlpParams,
    pub target_critic: MlpParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgLosses {
    pub critic_loss: f64,
    /// Mean critic value of the actor's own actions, before the actor step.
    pub actor_objective: f64,
}

impl DdpgAgent {
    pub fn new(config: DdpgConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut actor_dims = vec![OBS_DIM];
        actor_dims.extend_from_slice(&config.hidden);
        actor_dims.push(ACTION_DIM);
        let mut critic_dims = vec![OBS_DIM + ACTION_DIM];
        critic_dims.extend_from_slice(&config.hidden);
        critic_dims.push(1);
        let actor = MlpParams::init(&actor_dims, OutputActivation::UnitInterval, seeding::mix64(seed))?;
        let critic = MlpParams::init(
            &critic_dims,
            OutputActivation::Identity,
            seeding::mix64(seed ^ 0xc21c),
        )?;
        Ok(Self {
            actor_opt: AdamState::for_params(&actor),
            critic_opt: AdamState::for_params(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config,
        })
    }

    /// Deterministic actor output, optionally perturbed by clamped Gaussian noise.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, explore: bool, rng: &mut R) -> Result<MuscleAction> {
        let mut out = self.actor.forward(obs.as_slice())?;
        if explore && self.config.noise_sigma > 0.0 {
            for v in &mut out {
                *v += self.config.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        MuscleAction::from_slice(&out)
    }

    /// Critic regression toward the bootstrapped target, an actor ascent step
    /// through the updated critic, then soft updates of both targets.
    /// Leaves the agent untouched on a numerical failure.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<DdpgLosses> {
        if batch.is_empty() {
            return Err(Error::InsufficientData { needed: 1, available: 0 });
        }
        let n = batch.len();
        let cfg = &self.config;
        let obs = Mat::from_rows(&batch.iter().map(|t| t.obs.0).collect::<Vec<_>>())?;
        let actions = Mat::from_rows(&batch.iter().map(|t| t.action.0).collect::<Vec<_>>())?;
        let next_obs = Mat::from_rows(&batch.iter().map(|t| t.next_obs.0).collect::<Vec<_>>())?;

        let next_actions = self.target_actor.forward_batch(&next_obs)?.into_output();
        let next_q = self
            .target_critic
            .forward_batch(&next_obs.hcat(&next_actions)?)?
            .into_output();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let targets = critic_targets(&rewards, &dones, next_q.data(), cfg.gamma, cfg.reward_scale);

        // Critic step.
        let critic_cache = self.critic.forward_batch(&obs.hcat(&actions)?)?;
        let q = critic_cache.output().data();
        let mut upstream = Mat::zeros(n, 1);
        let mut critic_loss = 0.0;
        for i in 0..n {
            let err = q[i] - targets[i];
            critic_loss += err * err;
            upstream.data_mut()[i] = 2.0 * err / n as f64;
        }
        critic_loss /= n as f64;
        if !critic_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite critic loss {critic_loss}; update skipped")));
        }
        let (mut critic_grads, _) = self.critic.backward_batch(&critic_cache, &upstream)?;
        critic_grads.loss = critic_loss;
        let mut critic = self.critic.clone();
        let mut critic_opt = self.critic_opt.clone();
        adam_update(&mut critic, &critic_grads, &mut critic_opt, cfg.critic_lr)?;

        // Actor step; the critic only routes gradients here.
        let actor_cache = self.actor.forward_batch(&obs)?;
        let own = actor_cache.output();
        let q_cache = critic.forward_batch(&obs.hcat(own)?)?;
        let actor_objective = q_cache.output().data().iter().sum::<f64>() / n as f64;
        if !actor_objective.is_finite() {
            return Err(Error::Numerical("non-finite actor objective; update skipped".into()));
        }
        let ascend = Mat::from_vec(n, 1, vec![-1.0 / n as f64; n])?;
        let (_, dq_dinput) = critic.backward_batch(&q_cache, &ascend)?;
        let dq_daction = dq_dinput.columns(OBS_DIM, ACTION_DIM);
        let (mut actor_grads, _) = self.actor.backward_batch(&actor_cache, &dq_daction)?;
        actor_grads.loss = -actor_objective;
        let mut actor = self.actor.clone();
        let mut actor_opt = self.actor_opt.clone();
        adam_update(&mut actor, &actor_grads, &mut actor_opt, cfg.actor_lr)?;

        self.critic = critic;
        self.critic_opt = critic_opt;
        self.actor = actor;
        self.actor_opt = actor_opt;
        let tau = self.config.tau;
        soft_update(&mut self.target_critic, &self.critic, tau)?;
        soft_update(&mut self.target_actor, &self.actor, tau)?;
        Ok(DdpgLosses {
            critic_loss,
            actor_objective,
        })
    }
}

/// `scale·r + gamma·(1 - done)·Q'`.
pub fn critic_targets(rewards: &[f64], dones: &[bool], next_q: &[f64], gamma: f64, scale: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_q)
        .map(|((r, d), q)| if *d { scale * r } else { scale * r + gamma * q })
        .collect()
}

/// `target ← tau·online + (1 − tau)·target`, parameter by parameter.
pub fn soft_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::shape("soft update", target.num_params(), online.num_params()));
    }
    for (t, o) in target.values_mut().zip(online.values()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}
