use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mat;
use crate::error::{Error, Result};
use crate::seeding;

/// Activation applied after the last affine layer. Hidden layers are tanh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Logistic sigmoid onto `(0, 1)`.
    UnitInterval,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::UnitInterval => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::UnitInterval => y * (1.0 - y),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights and biases of a fully connected network.
///
/// `weights[i]` maps layer `i` to layer `i + 1` and has shape
/// `layer_dims[i + 1] × layer_dims[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Activations recorded by [`MlpParams::forward_batch`], consumed by the
/// derivative passes.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[L]` the output batch.
    acts: Vec<Mat>,
}

impl ForwardCache {
    pub fn output(&self) -> &Mat {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Mat {
        &self.acts[0]
    }

    pub fn into_output(mut self) -> Mat {
        self.acts.pop().expect("cache holds at least the input")
    }
}

/// Parameter gradients with the shapes of the owning [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            loss: 0.0,
        }
    }

    /// Flat view in the same order as [`MlpParams::values`].
    pub fn values(&self) -> impl Iterator<Item = &f64> + Clone + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.data_mut().iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn matches(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.rows() == w.rows() && g.cols() == w.cols())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases; a pure function of `seed`.
    pub fn init(layer_dims: &[usize], output_activation: OutputActivation, seed: u64) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let mut rng = seeding::stream(seed, 0x6e6e);
        let weights = layer_dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Mat::from_vec(fan_out, fan_in, data).expect("sized above")
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases: layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            output_activation,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_dims: &[usize], output_activation: OutputActivation) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Mat::zeros(p[1], p[0]))
                .collect(),
            biases: layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            output_activation,
        })
    }

    /// Network with the given dimensions whose flat parameter vector is `flat`.
    pub fn from_flat(
        layer_dims: &[usize],
        output_activation: OutputActivation,
        flat: &[f64],
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_dims, output_activation)?;
        params.set_flat(flat)?;
        Ok(params)
    }

    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least an input and an output layer, got dims {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_dims:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Mat] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Flat view: layer by layer, weights (row-major) then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> + Clone + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.data_mut().iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameter vector", self.num_params(), flat.len()));
        }
        self.values_mut().zip(flat).for_each(|(p, v)| *p = *v);
        Ok(())
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        let last = self.weights.len() - 1;
        let mut act = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&act)?;
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
                *zi = if l == last {
                    self.output_activation.apply(*zi)
                } else {
                    zi.tanh()
                };
            }
            act = z;
        }
        Ok(act)
    }

    /// Forward pass over a batch (one sample per row), keeping activations.
    pub fn forward_batch(&self, input: &Mat) -> Result<ForwardCache> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.cols()));
        }
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(input.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].matmul_nt(w)?;
            for i in 0..z.rows() {
                for (zi, bi) in z.row_mut(i).iter_mut().zip(b) {
                    *zi += bi;
                    *zi = if l == last {
                        self.output_activation.apply(*zi)
                    } else {
                        zi.tanh()
                    };
                }
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Reverse-mode pass: gradients of `Σ_rows output · upstream` with respect
    /// to every parameter (summed over the batch) and to every input row.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: &Mat) -> Result<(GradBundle, Mat)> {
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::shape(
                "upstream gradient",
                out.rows() * out.cols(),
                upstream.rows() * upstream.cols(),
            ));
        }
        let layers = self.weights.len();
        let mut grads = GradBundle::zeros_like(self);

        let mut delta = upstream.clone();
        let act = self.output_activation;
        for (d, y) in delta.data_mut().iter_mut().zip(out.data()) {
            *d *= act.derivative_from_output(*y);
        }
        for l in (0..layers).rev() {
            grads.weights[l] = delta.matmul_tn(&cache.acts[l])?;
            grads.biases[l] = delta.col_sums();
            let mut below = delta.matmul(&self.weights[l])?;
            if l > 0 {
                for (d, a) in below.data_mut().iter_mut().zip(cache.acts[l].data()) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = below;
        }
        Ok((grads, delta))
    }

    /// Single-input reverse-mode pass; returns parameter and input gradients.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(GradBundle, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("upstream gradient", self.output_dim(), upstream.len()));
        }
        let x = Mat::from_vec(1, input.len(), input.to_vec())?;
        let cache = self.forward_batch(&x)?;
        let up = Mat::from_vec(1, upstream.len(), upstream.to_vec())?;
        let (grads, dx) = self.backward_batch(&cache, &up)?;
        Ok((grads, dx.into_vec()))
    }

    /// Forward-mode pass: directional derivative of every output row along
    /// the parameter direction `direction` (same shapes as `self`).
    pub fn jvp_batch(&self, cache: &ForwardCache, direction: &MlpParams) -> Result<Mat> {
        if !self.same_shape(direction) {
            return Err(Error::shape(
                "tangent direction",
                self.num_params(),
                direction.num_params(),
            ));
        }
        let last = self.weights.len() - 1;
        let batch = cache.input().rows();
        let mut tangent = Mat::zeros(batch, self.input_dim());
        for l in 0..self.weights.len() {
            let mut dz = if l == 0 {
                Mat::zeros(batch, self.layer_dims[1])
            } else {
                tangent.matmul_nt(&self.weights[l])?
            };
            let from_weights = cache.acts[l].matmul_nt(&direction.weights[l])?;
            let next = &cache.acts[l + 1];
            for i in 0..batch {
                let row = dz.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v += from_weights.get(i, j) + direction.biases[l][j];
                    let y = next.get(i, j);
                    *v *= if l == last {
                        self.output_activation.derivative_from_output(y)
                    } else {
                        1.0 - y * y
                    };
                }
            }
            tangent = dz;
        }
        Ok(tangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 11).unwrap();
        let b = MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.weights()[0].rows(), a.weights()[0].cols()), (8, 4));
        assert_eq!((a.weights()[1].rows(), a.weights()[1].cols()), (19, 8));
        assert!(a.biases().iter().flatten().all(|&v| v == 0.0));
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.weights()[0].data().iter().all(|w| w.abs() <= limit));
        let c = MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_dims_are_config_errors() {
        assert!(matches!(
            MlpParams::init(&[4], OutputActivation::Identity, 0),
            Err(Error::Config(_))
        ));
        assert!(MlpParams::init(&[], OutputActivation::Identity, 0).is_err());
        assert!(MlpParams::init(&[4, 0, 2], OutputActivation::Identity, 0).is_err());
    }

    #[test]
    fn zero_network_outputs() {
        let id = MlpParams::zeros(&[4, 6, 3], OutputActivation::Identity).unwrap();
        assert_eq!(id.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap(), vec![0.0; 3]);
        let unit = MlpParams::zeros(&[4, 6, 3], OutputActivation::UnitInterval).unwrap();
        assert_eq!(unit.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let mut p = MlpParams::zeros(&[3, 3], OutputActivation::Identity).unwrap();
        p.weights_mut()[0] = Mat::identity(3);
        assert_eq!(p.forward(&[0.25, -1.5, 7.0]).unwrap(), vec![0.25, -1.5, 7.0]);
    }

    #[test]
    fn input_dimension_mismatch() {
        let p = MlpParams::zeros(&[3, 2], OutputActivation::Identity).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape { .. })));
        assert!(p.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn scalar_product_rule() {
        let mut p = MlpParams::zeros(&[1, 1], OutputActivation::Identity).unwrap();
        p.weights_mut()[0].set(0, 0, 2.0);
        let (g, dx) = p.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0].get(0, 0), 3.0);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = MlpParams::init(&[4, 5, 3], OutputActivation::UnitInterval, 2).unwrap();
        let (g, dx) = p.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let p = MlpParams::init(&[4, 7, 5], OutputActivation::UnitInterval, 5).unwrap();
        let rows = [[0.1, -0.4, 1.2, 3.0], [1.0, 0.0, -2.0, 0.5]];
        let cache = p.forward_batch(&Mat::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = p.forward(r).unwrap();
            for (a, b) in single.iter().zip(cache.output().row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_roundtrip() {
        let p = MlpParams::init(&[2, 3, 2], OutputActivation::Identity, 9).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        let q = MlpParams::from_flat(p.layer_dims(), p.output_activation(), &flat).unwrap();
        assert_eq!(p, q);
        let mut r = p.clone();
        assert!(r.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let p = MlpParams::init(&[3, 6, 4], OutputActivation::UnitInterval, 21).unwrap();
        let dir = MlpParams::init(&[3, 6, 4], OutputActivation::UnitInterval, 22).unwrap();
        let x = Mat::from_rows(&[[0.3, -0.2, 0.9], [1.5, 0.4, -0.7]]).unwrap();
        let cache = p.forward_batch(&x).unwrap();
        let jvp = p.jvp_batch(&cache, &dir).unwrap();
        let h = 1e-6;
        let shift = |s: f64| {
            let flat: Vec<f64> = p.values().zip(dir.values()).map(|(a, d)| a + s * d).collect();
            let q = MlpParams::from_flat(p.layer_dims(), p.output_activation(), &flat).unwrap();
            q.forward_batch(&x).unwrap().into_output()
        };
        let (plus, minus) = (shift(h), shift(-h));
        for i in 0..jvp.data().len() {
            let fd = (plus.data()[i] - minus.data()[i]) / (2.0 * h);
            assert!((fd - jvp.data()[i]).abs() < 1e-8, "{fd} vs {}", jvp.data()[i]);
        }
    }
}
