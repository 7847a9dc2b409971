//! Proximal policy optimization with the clipped probability-ratio surrogate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_logprob, GaussianPolicy};
use super::rollout::{fit_value, gather_rows, OnPolicyBatch};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamState, Mat, MlpParams, OutputActivation};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub log_std_init: f64,
    pub hidden: Vec<usize>,
    pub episodes_per_batch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            epochs_per_batch: 10,
            minibatch_size: 256,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            log_std_init: -1.0,
            hidden: vec![64, 64],
            episodes_per_batch: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_ratio.is_finite() && self.clip_ratio > 0.0) {
            return Err(Error::Config(format!("ppo clip_ratio must be > 0, got {}", self.clip_ratio)));
        }
        if !self.log_std_init.is_finite() {
            return Err(Error::Config("ppo log_std_init must be finite".into()));
        }
        if self.episodes_per_batch == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("ppo episodes_per_batch and minibatch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub policy: GaussianPolicy,
    pub value_net: MlpParams,
    pub policy_opt: AdamState,
    pub log_std_opt: AdamState,
    pub value_opt: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLosses {
    /// Mean clipped surrogate over the last epoch.
    pub surrogate: f64,
    pub value_loss: f64,
    pub skipped_minibatches: usize,
}

/// `min(ratio·A, clamp(ratio, 1 − clip, 1 + clip)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-probability
/// of the action (`d ratio / d logp = ratio`). Zero whenever the clipped
/// branch is the active minimum.
pub fn clipped_surrogate_logp_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if ratio * advantage <= clipped * advantage {
        advantage * ratio
    } else {
        0.0
    }
}

pub(crate) fn value_dims(hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![OBS_DIM];
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

impl PpoAgent {
    pub fn new(config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let policy = GaussianPolicy::new(&config.hidden, config.log_std_init, seeding::mix64(seed))?;
        let value_net = MlpParams::init(
            &value_dims(&config.hidden),
            OutputActivation::Identity,
            seeding::mix64(seed ^ 0x7a1e),
        )?;
        Ok(Self {
            policy_opt: AdamState::for_params(&policy.mean),
            log_std_opt: AdamState::new(ACTION_DIM),
            value_opt: AdamState::for_params(&value_net),
            policy,
            value_net,
            config,
        })
    }

    /// Clipped-surrogate ascent over shuffled minibatches, then value
    /// regression. Advantages must already be normalized.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &OnPolicyBatch, rng: &mut R) -> Result<PpoLosses> {
        let n = batch.len();
        if n == 0 {
            return Ok(PpoLosses::default());
        }
        let cfg = self.config.clone();
        let old_means = self.policy.mean.forward_batch(&batch.obs)?.into_output();
        let old_log_std = self.policy.log_std.clone();
        let logp_old: Vec<f64> = (0..n)
            .map(|i| gaussian_logprob(old_means.row(i), &old_log_std, batch.actions.row(i)))
            .collect();

        let mut order: Vec<usize> = (0..n).collect();
        let mut losses = PpoLosses::default();
        for _ in 0..cfg.epochs_per_batch {
            order.shuffle(rng);
            let mut epoch_surrogate = 0.0;
            let mut counted = 0usize;
            for chunk in order.chunks(cfg.minibatch_size) {
                match self.minibatch_step(batch, chunk, &logp_old) {
                    Ok(s) => {
                        epoch_surrogate += s * chunk.len() as f64;
                        counted += chunk.len();
                    }
                    Err(Error::Numerical(msg)) => {
                        log::warn!("ppo minibatch skipped: {msg}");
                        losses.skipped_minibatches += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if counted > 0 {
                losses.surrogate = epoch_surrogate / counted as f64;
            }
        }

        losses.value_loss = fit_value(
            &mut self.value_net,
            &mut self.value_opt,
            batch,
            cfg.epochs_per_batch,
            cfg.minibatch_size,
            cfg.value_lr,
            rng,
        )?;
        Ok(losses)
    }

    fn minibatch_step(&mut self, batch: &OnPolicyBatch, rows: &[usize], logp_old: &[f64]) -> Result<f64> {
        let clip = self.config.clip_ratio;
        let m = rows.len() as f64;
        let x = gather_rows(&batch.obs, rows);
        let cache = self.policy.mean.forward_batch(&x)?;
        let means = cache.output();
        let inv_var: Vec<f64> = self.policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

        let mut upstream = Mat::zeros(rows.len(), ACTION_DIM);
        let mut log_std_grad = vec![0.0; ACTION_DIM];
        let mut surrogate = 0.0;
        for (k, &i) in rows.iter().enumerate() {
            let action = batch.actions.row(i);
            let logp = gaussian_logprob(means.row(k), &self.policy.log_std, action);
            let ratio = (logp - logp_old[i]).exp();
            if !ratio.is_finite() {
                return Err(Error::Numerical(format!("non-finite probability ratio at sample {i}")));
            }
            let adv = batch.advantages[i];
            surrogate += clipped_surrogate(ratio, adv, clip);
            let g = clipped_surrogate_logp_grad(ratio, adv, clip);
            if g == 0.0 {
                continue;
            }
            // Loss is the negated mean surrogate.
            let up = upstream.row_mut(k);
            for d in 0..ACTION_DIM {
                let diff = action[d] - means.get(k, d);
                up[d] = -g * diff * inv_var[d] / m;
                log_std_grad[d] -= g * (diff * diff * inv_var[d] - 1.0) / m;
            }
        }
        let (mut grads, _) = self.policy.mean.backward_batch(&cache, &upstream)?;
        grads.loss = -surrogate / m;
        if !grads.is_finite() || log_std_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite policy gradient".into()));
        }
        adam_update(&mut self.policy.mean, &grads, &mut self.policy_opt, self.config.policy_lr)?;
        self.log_std_opt
            .step_slice(&mut self.policy.log_std, &log_std_grad, self.config.policy_lr)?;
        Ok(surrogate / m)
    }
}
