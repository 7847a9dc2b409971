use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::{gae_advantages, normalize_advantages};
use super::gaussian::GaussianPolicy;
use crate::env::{Environment, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamState, Mat, MlpParams};

/// Flattened on-policy experience from one or more episodes.
#[derive(Debug, Clone)]
pub struct OnPolicyBatch {
    pub obs: Mat,
    /// Unclamped sampled actions.
    pub actions: Mat,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl OnPolicyBatch {
    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.rows() == 0
    }

    pub fn normalize_advantages(&mut self) {
        normalize_advantages(&mut self.advantages);
    }

    /// Batch built from explicit arrays; advantages are used as given.
    pub fn from_parts(obs: Mat, actions: Mat, advantages: Vec<f64>, returns: Vec<f64>) -> Result<Self> {
        let n = obs.rows();
        if obs.cols() != OBS_DIM {
            return Err(Error::shape("batch observations", OBS_DIM, obs.cols()));
        }
        if actions.rows() != n || actions.cols() != ACTION_DIM {
            return Err(Error::shape("batch actions", n * ACTION_DIM, actions.rows() * actions.cols()));
        }
        if advantages.len() != n || returns.len() != n {
            return Err(Error::shape("batch advantages", n, advantages.len().min(returns.len())));
        }
        Ok(Self {
            obs,
            actions,
            advantages,
            returns,
            episode_returns: Vec::new(),
            episode_lengths: Vec::new(),
        })
    }
}

/// Runs the stochastic policy for the given episodes and computes GAE
/// advantages per episode. Time-limit truncation bootstraps from the value
/// net; a fall does not.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<R: Rng + ?Sized>(
    env: &mut Environment,
    policy: &GaussianPolicy,
    value_net: &MlpParams,
    episode_seeds: &[u64],
    steps_per_episode: usize,
    gamma: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<OnPolicyBatch> {
    let mut obs_rows: Vec<[f64; OBS_DIM]> = Vec::new();
    let mut action_rows: Vec<Vec<f64>> = Vec::new();
    let mut advantages = Vec::new();
    let mut returns = Vec::new();
    let mut episode_returns = Vec::new();
    let mut episode_lengths = Vec::new();

    for (k, &seed) in episode_seeds.iter().enumerate() {
        let mut obs = env.reset(seed);
        let start = obs_rows.len();
        let mut rewards = Vec::new();
        let mut fell = false;
        while rewards.len() < steps_per_episode && !env.is_done() {
            let (action, _) = policy.sample(obs.as_slice(), rng)?;
            let step = env
                .step(&action)
                .map_err(|e| e.context(format!("episode {k} step {}", rewards.len())))?;
            obs_rows.push(obs.0);
            action_rows.push(action);
            rewards.push(step.reward);
            fell = step.fall;
            obs = step.observation;
        }
        let ep_obs = Mat::from_rows(&obs_rows[start..])?;
        let values = if ep_obs.rows() > 0 {
            value_net.forward_batch(&ep_obs)?.into_output().into_vec()
        } else {
            Vec::new()
        };
        let last_value = if fell { 0.0 } else { value_net.forward(obs.as_slice())?[0] };
        let mut dones = vec![false; rewards.len()];
        if let Some(last) = dones.last_mut() {
            *last = fell;
        }
        let (adv, ret) = gae_advantages(&rewards, &values, last_value, &dones, gamma, lambda)?;
        advantages.extend(adv);
        returns.extend(ret);
        episode_returns.push(rewards.iter().sum());
        episode_lengths.push(rewards.len());
    }

    let obs = if obs_rows.is_empty() {
        Mat::zeros(0, OBS_DIM)
    } else {
        Mat::from_rows(&obs_rows)?
    };
    let actions = if action_rows.is_empty() {
        Mat::zeros(0, ACTION_DIM)
    } else {
        Mat::from_rows(&action_rows)?
    };
    Ok(OnPolicyBatch {
        obs,
        actions,
        advantages,
        returns,
        episode_returns,
        episode_lengths,
    })
}

/// Squared-error regression of the value net onto `batch.returns`; returns
/// the mean loss of the final epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit_value<R: Rng + ?Sized>(
    value_net: &mut MlpParams,
    opt: &mut AdamState,
    batch: &OnPolicyBatch,
    epochs: usize,
    minibatch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(minibatch.max(1)) {
            let x = gather_rows(&batch.obs, chunk);
            let cache = value_net.forward_batch(&x)?;
            let v = cache.output().data();
            let m = chunk.len() as f64;
            let mut up = Mat::zeros(chunk.len(), 1);
            let mut loss = 0.0;
            for (k, &i) in chunk.iter().enumerate() {
                let err = v[k] - batch.returns[i];
                loss += err * err;
                up.data_mut()[k] = 2.0 * err / m;
            }
            let (mut grads, _) = value_net.backward_batch(&cache, &up)?;
            grads.loss = loss / m;
            adam_update(value_net, &grads, opt, lr)?;
            total += loss;
        }
        last = total / n as f64;
    }
    Ok(last)
}

pub(crate) fn gather_rows(m: &Mat, rows: &[usize]) -> Mat {
    let mut out = Mat::zeros(rows.len(), m.cols());
    for (k, &i) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(m.row(i));
    }
    out
}
