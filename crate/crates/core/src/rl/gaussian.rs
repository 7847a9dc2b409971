use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Mat, MlpParams, OutputActivation};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of a diagonal Gaussian.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// `KL(old || new)` between two diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    mean_old
        .iter()
        .zip(log_std_old)
        .zip(mean_new.iter().zip(log_std_new))
        .map(|((mo, lo), (mn, ln))| {
            let var_old = (2.0 * lo).exp();
            let var_new = (2.0 * ln).exp();
            ln - lo + (var_old + (mo - mn).powi(2)) / (2.0 * var_new) - 0.5
        })
        .sum()
}

/// [`gaussian_kl`] averaged over a batch of states (one mean per row).
pub fn policy_kl(mean_old: &Mat, log_std_old: &[f64], mean_new: &Mat, log_std_new: &[f64]) -> Result<f64> {
    if mean_old.rows() != mean_new.rows() || mean_old.cols() != mean_new.cols() {
        return Err(Error::shape("policy mean batch", mean_old.rows(), mean_new.rows()));
    }
    if mean_old.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..mean_old.rows())
        .map(|i| gaussian_kl(mean_old.row(i), log_std_old, mean_new.row(i), log_std_new))
        .sum();
    Ok(total / mean_old.rows() as f64)
}

/// State-conditioned mean network with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: MlpParams,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(hidden: &[usize], log_std_init: f64, seed: u64) -> Result<Self> {
        let mut dims = vec![OBS_DIM];
        dims.extend_from_slice(hidden);
        dims.push(ACTION_DIM);
        Ok(Self {
            mean: MlpParams::init(&dims, OutputActivation::UnitInterval, seed)?,
            log_std: vec![log_std_init; ACTION_DIM],
        })
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// Mean-network parameters followed by the log standard deviations.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.mean.to_flat();
        flat.extend_from_slice(&self.log_std);
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("policy parameter vector", self.num_params(), flat.len()));
        }
        let split = self.mean.num_params();
        self.mean.set_flat(&flat[..split])?;
        self.log_std.copy_from_slice(&flat[split..]);
        Ok(())
    }

    /// Samples an unclamped action and returns it with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = gaussian_logprob(&mean, &self.log_std, &action);
        Ok((action, logp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logprob_at_mode_of_standard_normal() {
        let d = 7;
        let lp = gaussian_logprob(&vec![0.3; d], &vec![0.0; d], &vec![0.3; d]);
        assert!((lp - (-(d as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.2, -1.0], &[0.1, -0.3], &[0.2, -1.0], &[0.1, -0.3]), 0.0);
        assert!((gaussian_kl(&[0.0], &[0.0], &[1.0], &[0.0]) - 0.5).abs() < 1e-12);
        // N(0, 1) vs N(0, e²): ln e + 1/(2e²) - 1/2.
        let e2 = std::f64::consts::E.powi(2);
        assert!((gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]) - (0.5 + 0.5 / e2)).abs() < 1e-12);
    }

    #[test]
    fn batch_kl_averages() {
        let old = Mat::from_rows(&[[0.0], [0.0]]).unwrap();
        let new = Mat::from_rows(&[[1.0], [0.0]]).unwrap();
        assert!((policy_kl(&old, &[0.0], &new, &[0.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = GaussianPolicy::new(&[8], -1.0, 3).unwrap();
        let mut flat = p.to_flat();
        *flat.last_mut().unwrap() = 0.25;
        p.set_flat(&flat).unwrap();
        assert_eq!(p.to_flat(), flat);
        assert_eq!(p.log_std[ACTION_DIM - 1], 0.25);
    }
}
