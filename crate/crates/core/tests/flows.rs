//! Training dynamics against independent integrations and closed forms.

use tempdyn_core::datasets::{gaussian_blobs, Dataset};
use tempdyn_core::dynamics::{
    fixed_point_large_2class, fixed_point_small, momentum_train, regularized_linearized_flow, regularized_rhs,
    sgd_train, Field, Integrator, Mode, TimeAxis, TrainConfig,
};
use tempdyn_core::kernel::{analytic_ntk_fc, empirical_ntk, KernelTensor};
use tempdyn_core::linalg::Matrix;
use tempdyn_core::loss::hessian_near_equilibrium;
use tempdyn_core::model::{correlated_init, gaussian_vector, init_params, Activation, Mlp, NetworkSpec};
use tempdyn_core::rescale::{scheme_params, Scheme};
use tempdyn_core::timescales::collapse_metric;

fn spec(act: Activation, width: usize, k: usize) -> NetworkSpec {
    NetworkSpec {
        input_dim: 6,
        hidden_widths: vec![width],
        num_classes: k,
        activation: act,
        weight_scale: 1.0,
        bias_scale: 0.0,
    }
}

fn config(beta: f64, alpha: f64, steps: usize, record_every: usize) -> TrainConfig {
    TrainConfig {
        beta,
        alpha: Some(alpha),
        eta_tilde: None,
        momentum: None,
        l2: 0.0,
        mode: Mode::Nonlinear,
        integrator: Integrator::DiscreteSteps,
        steps,
        record_every,
        seed: 0,
    }
}

fn blobs(k: usize, m: usize) -> Dataset<f64> {
    gaussian_blobs::<f64>(k, m, 0, 6, 1.5, 2).unwrap()
}

#[test]
fn discrete_steps_converge_to_the_flow_at_first_order() {
    let s = spec(Activation::Erf, 32, 3);
    let model = Mlp::new(s.clone()).unwrap();
    let data = blobs(3, 12);
    let p0 = init_params::<f64>(&s, 1).as_slice().to_vec();
    let mut gaps = Vec::new();
    for halvings in 0..3 {
        let f = (1usize << halvings) as f64;
        let steps = 20 << halvings;
        let alpha = 0.1 / f;
        let c = config(1.0, alpha, steps, 1 << halvings);
        let discrete = sgd_train(&model, &p0, &data, &c).unwrap();
        let flow = sgd_train(&model, &p0, &data, &TrainConfig { integrator: Integrator::Rk4Flow, ..c }).unwrap();
        assert_eq!(discrete.records.len(), flow.records.len());
        let gap = discrete
            .records
            .iter()
            .zip(&flow.records)
            .map(|(a, b)| (a.loss - b.loss).abs())
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    for w in gaps.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.4..0.6).contains(&ratio), "gaps {gaps:?}");
    }
}

#[test]
fn small_rate_sgd_collapses_in_rescaled_time() {
    let s = spec(Activation::Relu, 64, 2);
    let model = Mlp::new(s.clone()).unwrap();
    let data = blobs(2, 16);
    let p0 = init_params::<f64>(&s, 3).as_slice().to_vec();
    let a = sgd_train(&model, &p0, &data, &config(1.0, 2e-3, 200, 2)).unwrap();
    let b = sgd_train(&model, &p0, &data, &config(1.0, 1e-3, 400, 4)).unwrap();
    let curves = [a.curve(Field::Loss, TimeAxis::Scaled(2e-3)), b.curve(Field::Loss, TimeAxis::Scaled(1e-3))];
    assert!(collapse_metric(&curves, 0.4).unwrap() < 0.01);
}

#[test]
fn effective_rate_momentum_collapses_across_beta() {
    let s = spec(Activation::Relu, 128, 2);
    let data = blobs(2, 16);
    let model = correlated_init::<f64>(&s, 2, -1.0).unwrap();
    let p0 = model.trainable_init().as_slice().to_vec();
    let (eta, gamma_tilde) = (0.01, 4.0);
    let mut curves = Vec::new();
    for beta in [0.5, 1.0, 2.0] {
        let sp = scheme_params(Scheme::EffectiveLr, eta, gamma_tilde, beta).unwrap();
        let c = TrainConfig {
            momentum: Some(sp.gamma),
            ..config(beta, sp.alpha, 60, 1)
        };
        let traj = momentum_train(&model, &p0, &data, &c).unwrap();
        curves.push(traj.curve(Field::Loss, TimeAxis::Scaled(sp.tau_scale)));
    }
    assert!(collapse_metric(&curves, 1.0 / gamma_tilde).unwrap() < 0.05);
}

fn erf_kernel(k: usize, m: usize) -> (Dataset<f64>, KernelTensor<f64>) {
    let s = spec(Activation::Erf, 16, k);
    let data = blobs(k, m);
    let theta = analytic_ntk_fc::<f64>(&s, &data.train.x, &data.train.x).unwrap();
    (data, theta)
}

#[test]
fn regularized_flow_stays_inside_its_bound() {
    let (data, theta) = erf_kernel(3, 9);
    let z0 = Matrix::new(9, 3, gaussian_vector(5, 0, 27)).unwrap().scale(0.3);
    let (beta, alpha, l2) = (1.5, 0.5, 0.2);
    let times: Vec<f64> = (0..=60).map(|i| i as f64).collect();
    let traj = regularized_linearized_flow(&theta, &z0, &data.train.y, beta, alpha, l2, &times, None).unwrap();
    // |r| <= sqrt(2) per example, so |delta z| <= (beta alpha / l2) |Theta|_F sqrt(2 M).
    let bound = beta * alpha / l2 * theta.frobenius_norm() * (2.0 * 9.0f64).sqrt();
    for z in &traj.logits {
        let dz = z.sub(&z0).unwrap().scale(1.0 / beta).frobenius_norm();
        assert!(dz <= bound);
    }
}

#[test]
fn flow_linearization_matches_the_hessian() {
    let s = spec(Activation::Relu, 32, 3);
    let data = blobs(3, 6);
    let model = Mlp::new(s.clone()).unwrap();
    let p = init_params::<f64>(&s, 4);
    let theta = empirical_ntk(&model, p.as_slice(), &data.train.x, &data.train.x).unwrap();
    let (beta, l2) = (1.3, 0.05);
    let y = &data.train.y;
    let z0 = Matrix::zeros(6, 3);
    let z_star = fixed_point_small(&theta, y, beta, l2).unwrap().z_star;
    let h = hessian_near_equilibrium(&theta, &z_star.scale(beta), beta, l2).unwrap();
    let n = 18;
    let mut worst = 0.0f64;
    for c in 0..n {
        let eps = 1e-6;
        let mut up = z_star.clone();
        up.as_mut_slice()[c] += eps;
        let mut down = z_star.clone();
        down.as_mut_slice()[c] -= eps;
        let fu = regularized_rhs(&theta, &up, &z0, y, beta, 1.0, l2).unwrap();
        let fd = regularized_rhs(&theta, &down, &z0, y, beta, 1.0, l2).unwrap();
        for r in 0..n {
            let column = (fu.as_slice()[r] - fd.as_slice()[r]) / (2.0 * eps);
            worst = worst.max((column + h.operator[(r, c)]).abs());
        }
    }
    assert!(worst <= 1e-6 * h.operator.max_abs(), "{worst}");
}

#[test]
fn small_fixed_point_is_the_long_time_limit() {
    let (data, theta) = erf_kernel(2, 8);
    let (beta, l2) = (1e-4, 1.0);
    let fp = fixed_point_small(&theta, &data.train.y, beta, l2).unwrap();
    assert!(fp.validity < 0.01);
    let z0 = Matrix::zeros(8, 2);
    let traj = regularized_linearized_flow(&theta, &z0, &data.train.y, beta, 1.0, l2, &[0.0, 40.0], None).unwrap();
    let z = traj.logits.last().unwrap().scale(1.0 / beta);
    let err = z.sub(&fp.z_star).unwrap().frobenius_norm() / fp.z_star.frobenius_norm();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn large_fixed_point_is_the_long_time_limit() {
    let (data, theta) = erf_kernel(2, 8);
    let (beta, l2) = (10.0, 0.01);
    let fp = fixed_point_large_2class(&theta.class_average(), data.train.labels(), beta, l2).unwrap();
    assert!(fp.sign_consistent);
    let z0 = Matrix::zeros(8, 2);
    let traj = regularized_linearized_flow(&theta, &z0, &data.train.y, beta, 1.0, l2, &[0.0, 40.0 / l2], None).unwrap();
    let z = traj.logits.last().unwrap().scale(1.0 / beta);
    for (a, &z1) in fp.z1.iter().enumerate() {
        // Logit sums are conserved from zero, so z = (z1, -z1).
        assert!((z[(a, 0)] + z[(a, 1)]).abs() < 1e-9);
        assert!((z[(a, 0)] / z1 - 1.0).abs() < 1e-3, "example {a}: {} vs {z1}", z[(a, 0)]);
    }
}
