//! Derivatives checked against finite differences and explicit loops.

use tempdyn_core::datasets::gaussian_blobs;
use tempdyn_core::dynamics::{sgd_train, Integrator, Mode, TrainConfig};
use tempdyn_core::linalg::Matrix;
use tempdyn_core::loss::xent_loss;
use tempdyn_core::model::{
    batch_jacobian, correlated_init, gaussian_vector, init_params, Activation, Mlp, Model, NetworkSpec,
};

fn spec(act: Activation, widths: Vec<usize>) -> NetworkSpec {
    NetworkSpec {
        input_dim: 5,
        hidden_widths: widths,
        num_classes: 3,
        activation: act,
        weight_scale: 1.4,
        bias_scale: 0.2,
    }
}

fn fd_jacobian<M: Model<f64>>(model: &M, params: &[f64], x: &[f64]) -> Matrix<f64> {
    let xm = Matrix::new(1, x.len(), x.to_vec()).unwrap();
    let k = model.num_classes();
    let mut out = Matrix::zeros(k, params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let h = 1e-6 * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        let up = model.forward(&p, &xm).unwrap();
        p[j] = params[j] - h;
        let down = model.forward(&p, &xm).unwrap();
        p[j] = params[j];
        for i in 0..k {
            out[(i, j)] = (up[(0, i)] - down[(0, i)]) / (2.0 * h);
        }
    }
    out
}

fn rel(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
}

#[test]
fn correlated_jacobian_matches_finite_differences() {
    for c in [-1.0, 0.3, 1.0] {
        let s = spec(Activation::Erf, vec![12, 7]);
        let model = correlated_init::<f64>(&s, 4, c).unwrap();
        let x: Vec<f64> = gaussian_vector(8, 0, 5);
        let p = model.trainable_init().as_slice();
        let j = model.jacobian(p, &x).unwrap();
        assert!(rel(&j, &fd_jacobian(&model, p, &x)) < 1e-7, "c = {c}");
    }
}

#[test]
fn vjp_and_batch_jacobian_match_loops() {
    let s = spec(Activation::Relu, vec![16]);
    let model = Mlp::new(s.clone()).unwrap();
    let p = init_params::<f64>(&s, 2);
    let x = Matrix::new(6, 5, gaussian_vector(3, 0, 30)).unwrap();
    let cot = Matrix::new(6, 3, gaussian_vector(4, 0, 18)).unwrap();
    let batch = batch_jacobian(&model, p.as_slice(), &x).unwrap();
    let mut expect = vec![0.0; p.len()];
    for m in 0..6 {
        let j = model.jacobian(p.as_slice(), x.row(m)).unwrap();
        for i in 0..3 {
            assert_eq!(batch.row(m * 3 + i), j.row(i));
            for (e, v) in expect.iter_mut().zip(j.row(i)) {
                *e += cot[(m, i)] * v;
            }
        }
    }
    let got = model.vjp(p.as_slice(), &x, &cot).unwrap();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn sgd_step_descends_the_summed_loss() {
    // One step of size alpha moves theta by -alpha times the gradient of M * mean xent(beta z).
    let s = spec(Activation::Erf, vec![10]);
    let model = Mlp::new(s.clone()).unwrap();
    let data = gaussian_blobs::<f64>(3, 9, 0, 5, 1.0, 3).unwrap();
    let p0 = init_params::<f64>(&s, 6).as_slice().to_vec();
    let (alpha, beta) = (0.01, 2.5);
    let config = TrainConfig {
        beta,
        alpha: Some(alpha),
        eta_tilde: None,
        momentum: None,
        l2: 0.0,
        mode: Mode::Nonlinear,
        integrator: Integrator::DiscreteSteps,
        steps: 1,
        record_every: 1,
        seed: 0,
    };
    let traj = sgd_train(&model, &p0, &data, &config).unwrap();
    let p1 = traj.final_params.unwrap();
    let summed = |p: &[f64]| {
        let z = model.forward(p, &data.train.x).unwrap().scale(beta);
        xent_loss(&z, &data.train.y).unwrap() * data.train.len() as f64
    };
    let mut p = p0.clone();
    for j in 0..p0.len() {
        let h = 1e-6;
        p[j] = p0[j] + h;
        let up = summed(&p);
        p[j] = p0[j] - h;
        let down = summed(&p);
        p[j] = p0[j];
        let grad = (up - down) / (2.0 * h);
        let step = p1[j] - p0[j];
        assert!((step / alpha + grad).abs() <= 1e-6 * grad.abs().max(1.0), "param {j}: {} vs {grad}", -step / alpha);
    }
}
