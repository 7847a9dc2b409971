use serde::{Deserialize, Serialize};

use super::{GradBundle, MlpParams};
use crate::error::{Error, Result};

/// Bias-corrected Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_stab: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_stab: 1e-8,
        }
    }

    pub fn for_params(params: &MlpParams) -> Self {
        Self::new(params.num_params())
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One Adam step on an arbitrary flat parameter sequence. Nothing is
    /// modified when a gradient is non-finite.
    pub fn step<'a, 'b>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'b f64> + Clone,
        lr: f64,
    ) -> Result<()> {
        let count = grads.clone().count();
        if count != self.len() {
            return Err(Error::shape("optimizer state", self.len(), count));
        }
        if let Some(bad) = grads.clone().find(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {bad}; update rejected"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon_stab);
        for (((p, g), m), v) in params
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("parameter vector", params.len(), grads.len()));
        }
        self.step(params.iter_mut(), grads.iter(), lr)
    }
}

/// Applies one Adam descent step of `grads` to `params`.
pub fn adam_update(
    params: &mut MlpParams,
    grads: &GradBundle,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grads.matches(params) {
        return Err(Error::shape("gradient bundle", params.num_params(), grads.len()));
    }
    state.step(params.values_mut(), grads.values(), lr)
}
