use crate::error::{Error, Result};

/// Generalized advantage estimates and the matching value targets.
///
/// `dones[t]` marks that the episode terminated after step `t`, which cuts
/// both the bootstrap and the advantage recursion. `last_value` bootstraps the
/// step after the final one.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    last_value: f64,
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n {
        return Err(Error::shape("value estimates", n, values.len()));
    }
    if dones.len() != n {
        return Err(Error::shape("done flags", n, dones.len()));
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Shifts to zero mean and unit variance; leaves the values untouched when
/// the variance is below `1e-8`.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var < 1e-8 {
        return;
    }
    let std = var.sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}
