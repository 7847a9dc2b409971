use gaitlab_core::nn::gradcheck::{max_relative_error, numerical_gradients};
use gaitlab_core::nn::adam_update;
use gaitlab_core::{AdamState, Error, GradBundle, Mat, MlpParams, OutputActivation};
use proptest::prelude::*;

/// Straight-line forward pass over the public weights, used as an oracle.
fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = p.weights().len() - 1;
    for (l, (w, b)) in p.weights().iter().zip(p.biases()).enumerate() {
        let mut next = vec![0.0; w.rows()];
        for (r, out) in next.iter_mut().enumerate() {
            let mut z = b[r];
            for (c, v) in h.iter().enumerate() {
                z += w.get(r, c) * v;
            }
            *out = if l < last {
                z.tanh()
            } else {
                match p.output_activation() {
                    OutputActivation::Identity => z,
                    OutputActivation::UnitInterval => 1.0 / (1.0 + (-z).exp()),
                }
            };
        }
        h = next;
    }
    h
}

#[test]
fn small_network_gradients_match_finite_differences() {
    for act in [OutputActivation::Identity, OutputActivation::UnitInterval] {
        let p = MlpParams::init(&[4, 16, 3], act, 5).unwrap();
        let x = [0.4, -1.1, 0.25, 2.0];
        let up = [1.0, -0.5, 0.3];
        let err = max_relative_error(&p, &x, &up, 1e-5).unwrap();
        assert!(err < 1e-4, "{act:?}: {err}");

        let (grads, dx) = p.backward(&x, &up).unwrap();
        let (num_p, num_x) = numerical_gradients(&p, &x, &up, 1e-5).unwrap();
        assert_eq!(grads.len(), num_p.len());
        for (a, n) in dx.iter().zip(&num_x) {
            assert!((a - n).abs() < 1e-7);
        }
    }
}

#[test]
fn init_shapes_and_errors() {
    let p = MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 1).unwrap();
    let shapes: Vec<(usize, usize)> = p.weights().iter().map(|w| (w.rows(), w.cols())).collect();
    assert_eq!(shapes, vec![(8, 4), (19, 8)]);
    assert_eq!(p.num_params(), 8 * 4 + 8 + 19 * 8 + 19);
    assert!(matches!(MlpParams::init(&[4], OutputActivation::Identity, 1), Err(Error::Config(_))));
    assert!(matches!(MlpParams::init(&[], OutputActivation::Identity, 1), Err(Error::Config(_))));
    assert_eq!(p, MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 1).unwrap());
    assert_ne!(p, MlpParams::init(&[4, 8, 19], OutputActivation::UnitInterval, 2).unwrap());
}

#[test]
fn zero_networks() {
    let id = MlpParams::zeros(&[4, 5, 3], OutputActivation::Identity).unwrap();
    assert_eq!(id.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 3]);
    let unit = MlpParams::zeros(&[4, 5, 3], OutputActivation::UnitInterval).unwrap();
    assert_eq!(unit.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.5; 3]);
}

#[test]
fn shape_errors() {
    let p = MlpParams::init(&[4, 8, 2], OutputActivation::Identity, 1).unwrap();
    assert!(matches!(p.forward(&[1.0; 3]), Err(Error::Shape { .. })));
    assert!(matches!(p.backward(&[1.0; 4], &[1.0; 3]), Err(Error::Shape { .. })));
    let other = MlpParams::init(&[4, 8, 3], OutputActivation::Identity, 1).unwrap();
    let g = GradBundle::zeros_like(&other);
    let mut q = p.clone();
    let mut opt = AdamState::for_params(&p);
    assert!(matches!(adam_update(&mut q, &g, &mut opt, 0.1), Err(Error::Shape { .. })));
}

#[test]
fn one_adam_step_on_a_parabola() {
    let mut theta = [1.0];
    let mut opt = AdamState::new(1);
    let grad = [2.0 * theta[0]];
    opt.step_slice(&mut theta, &grad, 0.1).unwrap();
    // The bias-corrected first step is lr * g / (|g| + eps).
    let expected = 1.0 - 0.1 * 2.0 / (2.0 + opt.epsilon_stab);
    assert!((theta[0] - expected).abs() < 1e-15);
    assert!((theta[0] - 0.9).abs() < 1e-7);
}

#[test]
fn rejected_adam_step_keeps_state() {
    let mut theta = [1.0, 2.0];
    let mut opt = AdamState::new(2);
    opt.step_slice(&mut theta, &[0.5, -0.5], 0.01).unwrap();
    let (before_theta, before_opt) = (theta, opt.clone());
    assert!(matches!(opt.step_slice(&mut theta, &[f64::NAN, 1.0], 0.01), Err(Error::Numerical(_))));
    assert_eq!(theta, before_theta);
    assert_eq!(opt, before_opt);
}

fn arch() -> impl Strategy<Value = (Vec<usize>, bool, u64)> {
    (prop::collection::vec(1usize..7, 2..5), any::<bool>(), any::<u64>())
}

fn activation(unit: bool) -> OutputActivation {
    if unit {
        OutputActivation::UnitInterval
    } else {
        OutputActivation::Identity
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_the_naive_oracle((dims, unit, seed) in arch(), scale in 0.1f64..3.0) {
        let p = MlpParams::init(&dims, activation(unit), seed).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|i| scale * ((i as f64) * 0.7).sin()).collect();
        let out = p.forward(&x).unwrap();
        let oracle = naive_forward(&p, &x);
        prop_assert_eq!(out.len(), *dims.last().unwrap());
        for (a, b) in out.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        if unit {
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gradients_match_finite_differences((dims, unit, seed) in arch()) {
        let p = MlpParams::init(&dims, activation(unit), seed).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|i| 0.3 * i as f64 - 0.5).collect();
        let up: Vec<f64> = (0..*dims.last().unwrap()).map(|i| 1.0 - 0.4 * i as f64).collect();
        prop_assert!(max_relative_error(&p, &x, &up, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn batch_rows_match_single_passes((dims, unit, seed) in arch(), rows in 1usize..6) {
        let p = MlpParams::init(&dims, activation(unit), seed).unwrap();
        let data: Vec<f64> = (0..rows * dims[0]).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
        let x = Mat::from_vec(rows, dims[0], data).unwrap();
        let out = p.forward_batch(&x).unwrap().into_output();
        prop_assert_eq!(out.rows(), rows);
        prop_assert_eq!(out.cols(), *dims.last().unwrap());
        for r in 0..rows {
            let single = p.forward(x.row(r)).unwrap();
            for (a, b) in out.row(r).iter().zip(&single) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_bundle_matches_parameter_shapes((dims, unit, seed) in arch()) {
        let p = MlpParams::init(&dims, activation(unit), seed).unwrap();
        let x = vec![0.1; dims[0]];
        let up = vec![1.0; *dims.last().unwrap()];
        let (g, dx) = p.backward(&x, &up).unwrap();
        prop_assert_eq!(g.len(), p.num_params());
        prop_assert_eq!(dx.len(), dims[0]);
        let flat = p.to_flat();
        let q = MlpParams::from_flat(&dims, activation(unit), &flat).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn first_adam_step_has_magnitude_lr(g in prop::sample::select(vec![-1e3, -2.0, -0.01, 0.01, 0.5, 7.0, 1e4]), lr in 1e-4f64..0.5) {
        let mut theta = [0.0];
        let mut opt = AdamState::new(1);
        opt.step_slice(&mut theta, &[g], lr).unwrap();
        prop_assert!((theta[0].abs() - lr).abs() < lr * 1e-5);
        prop_assert!(theta[0].signum() == -g.signum());
    }
}
