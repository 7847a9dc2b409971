//! Central finite differences for checking analytic network gradients.

use super::{GradBundle, MlpParams};
use crate::error::Result;

/// Numerical gradient of `output · upstream` with respect to every parameter
/// and input, by central differences with step `h`.
pub fn numerical_gradients(
    params: &MlpParams,
    input: &[f64],
    upstream: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let objective = |p: &MlpParams, x: &[f64]| -> Result<f64> {
        Ok(p.forward(x)?.iter().zip(upstream).map(|(o, u)| o * u).sum())
    };

    let flat = params.to_flat();
    let mut probe = params.clone();
    let mut param_grads = Vec::with_capacity(flat.len());
    let mut shifted = flat.clone();
    for i in 0..flat.len() {
        shifted[i] = flat[i] + h;
        probe.set_flat(&shifted)?;
        let plus = objective(&probe, input)?;
        shifted[i] = flat[i] - h;
        probe.set_flat(&shifted)?;
        let minus = objective(&probe, input)?;
        shifted[i] = flat[i];
        param_grads.push((plus - minus) / (2.0 * h));
    }

    let mut x = input.to_vec();
    let mut input_grads = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        x[i] = input[i] + h;
        let plus = objective(params, &x)?;
        x[i] = input[i] - h;
        let minus = objective(params, &x)?;
        x[i] = input[i];
        input_grads.push((plus - minus) / (2.0 * h));
    }
    Ok((param_grads, input_grads))
}

/// Relative error with a small absolute floor so that entries which are
/// zero in both gradients do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Largest relative error between backpropagated and finite-difference
/// gradients over parameters and inputs.
pub fn max_relative_error(params: &MlpParams, input: &[f64], upstream: &[f64], h: f64) -> Result<f64> {
    let (grads, dx): (GradBundle, Vec<f64>) = params.backward(input, upstream)?;
    let (numeric_params, numeric_input) = numerical_gradients(params, input, upstream, h)?;
    let worst = grads
        .values()
        .zip(&numeric_params)
        .chain(dx.iter().zip(&numeric_input))
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(worst)
}
