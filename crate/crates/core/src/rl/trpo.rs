//! Trust region policy optimization: a natural-gradient step solved by
//! conjugate gradient against Fisher-vector products, scaled to the KL
//! radius and accepted by backtracking line search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_logprob, policy_kl, GaussianPolicy};
use super::ppo::value_dims;
use super::rollout::{fit_value, OnPolicyBatch};
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ForwardCache, Mat, MlpParams, OutputActivation};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    pub kl_delta: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub backtrack_coeff: f64,
    pub backtrack_steps: usize,
    pub damping: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_lr: f64,
    pub value_epochs: usize,
    pub value_minibatch: usize,
    pub log_std_init: f64,
    pub hidden: Vec<usize>,
    pub episodes_per_batch: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            kl_delta: 0.01,
            cg_iters: 10,
            cg_tol: 1e-8,
            backtrack_coeff: 0.8,
            backtrack_steps: 10,
            damping: 0.1,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_lr: 1e-3,
            value_epochs: 10,
            value_minibatch: 256,
            log_std_init: -1.0,
            hidden: vec![64, 64],
            episodes_per_batch: 4,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_delta.is_finite() && self.kl_delta > 0.0) {
            return Err(Error::Config(format!("trpo kl_delta must be > 0, got {}", self.kl_delta)));
        }
        if self.cg_iters < 1 {
            return Err(Error::Config("trpo cg_iters must be >= 1".into()));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return Err(Error::Config("trpo backtrack_coeff must lie in (0, 1)".into()));
        }
        if self.damping < 0.0 || self.episodes_per_batch == 0 {
            return Err(Error::Config("trpo damping must be >= 0 and episodes_per_batch > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpoAgent {
    pub config: TrpoConfig,
    pub policy: GaussianPolicy,
    pub value_net: MlpParams,
    pub value_opt: AdamState,
}

/// Result of one trust-region policy update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrpoOutcome {
    pub step_accepted: bool,
    /// Mean KL from the pre-update policy; zero when no step was taken.
    pub kl_after: f64,
    pub surrogate_improvement: f64,
    /// Backtracking shrinks applied before acceptance.
    pub backtracks: usize,
}

impl TrpoOutcome {
    fn rejected() -> Self {
        Self {
            step_accepted: false,
            kl_after: 0.0,
            surrogate_improvement: 0.0,
            backtracks: 0,
        }
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` given only products
/// `v ↦ A v`. Stops once the residual norm is at most `tol` or after `iters`
/// iterations.
pub fn conjugate_gradient<F>(mut apply_a: F, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = apply_a(&p)?;
        if ap.len() != n {
            return Err(Error::shape("operator output", n, ap.len()));
        }
        let pap = dot(&p, &ap);
        let alpha = rr / pap;
        if !alpha.is_finite() || pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradient broke down (pᵀAp = {pap})"
            )));
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Numerical("non-finite conjugate gradient residual".into()));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hessian of the mean `KL(current || θ)` at the current policy, plus
/// damping, as a matrix-free operator over the flat policy vector.
///
/// At the current policy the Hessian reduces to the Fisher form: for the
/// mean network `(1/N) Σ Jᵀ diag(σ⁻²) J`, and `2·I` for the log-std block,
/// with no cross terms. `J v` comes from a forward-mode pass and `Jᵀ u`
/// from a reverse-mode pass through the same cached activations.
pub struct FisherOperator<'a> {
    policy: &'a GaussianPolicy,
    cache: ForwardCache,
    inv_var: Vec<f64>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(policy: &'a GaussianPolicy, states: &Mat, damping: f64) -> Result<Self> {
        let cache = policy.mean.forward_batch(states)?;
        Ok(Self {
            inv_var: policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect(),
            policy,
            cache,
            damping,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let total = self.policy.num_params();
        if v.len() != total {
            return Err(Error::shape("fisher vector", total, v.len()));
        }
        let split = self.policy.mean.num_params();
        let n = self.cache.input().rows();
        let mut out = Vec::with_capacity(total);
        if n > 0 {
            let mean = &self.policy.mean;
            let direction = MlpParams::from_flat(mean.layer_dims(), mean.output_activation(), &v[..split])?;
            let mut jv = mean.jvp_batch(&self.cache, &direction)?;
            for i in 0..n {
                for (u, iv) in jv.row_mut(i).iter_mut().zip(&self.inv_var) {
                    *u *= iv / n as f64;
                }
            }
            let (grads, _) = mean.backward_batch(&self.cache, &jv)?;
            out.extend(grads.values().copied());
        } else {
            out.resize(split, 0.0);
        }
        // Log-std block: every state contributes 2/N.
        let log_std_scale = if n > 0 { 2.0 } else { 0.0 };
        out.extend(v[split..].iter().map(|x| log_std_scale * x));
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        Ok(out)
    }
}

/// `H v + damping·v` for the KL Hessian `H` over `states`.
pub fn fisher_vector_product(policy: &GaussianPolicy, states: &Mat, v: &[f64], damping: f64) -> Result<Vec<f64>> {
    FisherOperator::new(policy, states, damping)?.apply(v)
}

/// Importance-weighted surrogate `mean(exp(logp − logp_old)·A)`.
fn surrogate(means: &Mat, log_std: &[f64], batch: &OnPolicyBatch, logp_old: &[f64]) -> f64 {
    let n = batch.len();
    (0..n)
        .map(|i| {
            let logp = gaussian_logprob(means.row(i), log_std, batch.actions.row(i));
            (logp - logp_old[i]).exp() * batch.advantages[i]
        })
        .sum::<f64>()
        / n as f64
}

impl TrpoAgent {
    pub fn new(config: TrpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let policy = GaussianPolicy::new(&config.hidden, config.log_std_init, seeding::mix64(seed))?;
        let value_net = MlpParams::init(
            &value_dims(&config.hidden),
            OutputActivation::Identity,
            seeding::mix64(seed ^ 0x7a1e),
        )?;
        Ok(Self {
            value_opt: AdamState::for_params(&value_net),
            policy,
            value_net,
            config,
        })
    }

    /// One trust-region policy step. Advantages must already be normalized.
    /// On line-search exhaustion the policy is left bitwise unchanged.
    pub fn update_policy(&mut self, batch: &OnPolicyBatch) -> Result<TrpoOutcome> {
        let n = batch.len();
        if n == 0 {
            return Ok(TrpoOutcome::rejected());
        }
        let cfg = &self.config;
        let cache = self.policy.mean.forward_batch(&batch.obs)?;
        let old_means = cache.output().clone();
        let old_log_std = self.policy.log_std.clone();
        let logp_old: Vec<f64> = (0..n)
            .map(|i| gaussian_logprob(old_means.row(i), &old_log_std, batch.actions.row(i)))
            .collect();

        // Surrogate gradient at the current policy, where every ratio is 1.
        let inv_var: Vec<f64> = old_log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
        let mut upstream = Mat::zeros(n, ACTION_DIM);
        let mut log_std_grad = vec![0.0; ACTION_DIM];
        for i in 0..n {
            let adv = batch.advantages[i] / n as f64;
            let action = batch.actions.row(i);
            let row = upstream.row_mut(i);
            for d in 0..ACTION_DIM {
                let diff = action[d] - old_means.get(i, d);
                row[d] = adv * diff * inv_var[d];
                log_std_grad[d] += adv * (diff * diff * inv_var[d] - 1.0);
            }
        }
        let (mean_grad, _) = self.policy.mean.backward_batch(&cache, &upstream)?;
        let mut gradient: Vec<f64> = mean_grad.to_flat();
        gradient.extend_from_slice(&log_std_grad);
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite surrogate gradient".into()));
        }
        if gradient.iter().all(|&g| g == 0.0) {
            return Ok(TrpoOutcome::rejected());
        }

        let fisher = FisherOperator::new(&self.policy, &batch.obs, cfg.damping)?;
        let direction = conjugate_gradient(|v| fisher.apply(v), &gradient, cfg.cg_iters, cfg.cg_tol)?;
        let curvature = dot(&direction, &fisher.apply(&direction)?);
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::Numerical(format!("non-positive step curvature {curvature}")));
        }
        let scale = (2.0 * cfg.kl_delta / curvature).sqrt();
        let theta_old = self.policy.to_flat();
        let surr_old = surrogate(&old_means, &old_log_std, batch, &logp_old);

        let mut candidate = self.policy.clone();
        let mut fraction = 1.0;
        for backtracks in 0..cfg.backtrack_steps {
            let theta: Vec<f64> = theta_old
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + fraction * scale * d)
                .collect();
            candidate.set_flat(&theta)?;
            let means = candidate.mean.forward_batch(&batch.obs)?.into_output();
            let kl = policy_kl(&old_means, &old_log_std, &means, &candidate.log_std)?;
            let improvement = surrogate(&means, &candidate.log_std, batch, &logp_old) - surr_old;
            if kl.is_finite() && improvement.is_finite() && improvement > 0.0 && kl <= cfg.kl_delta {
                self.policy = candidate;
                return Ok(TrpoOutcome {
                    step_accepted: true,
                    kl_after: kl,
                    surrogate_improvement: improvement,
                    backtracks,
                });
            }
            fraction *= cfg.backtrack_coeff;
        }
        Ok(TrpoOutcome::rejected())
    }

    /// Policy step followed by value regression.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &OnPolicyBatch, rng: &mut R) -> Result<TrpoOutcome> {
        let outcome = self.update_policy(batch)?;
        let cfg = &self.config;
        fit_value(
            &mut self.value_net,
            &mut self.value_opt,
            batch,
            cfg.value_epochs,
            cfg.value_minibatch,
            cfg.value_lr,
            rng,
        )?;
        Ok(outcome)
    }
}
