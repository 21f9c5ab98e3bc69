//! Dense linear algebra and spectra checked against nalgebra.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempdyn_core::datasets::gaussian_blobs;
use tempdyn_core::kernel::empirical_ntk;
use tempdyn_core::linalg::{condition_number, pinv_symmetric, singular_values, solve, symmetric_eigen, Matrix};
use tempdyn_core::loss::{hessian_near_equilibrium, softmax_jacobian};
use tempdyn_core::model::{init_params, Activation, Mlp, NetworkSpec};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn symmetric_eigenvalues_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 5, 17, 60] {
        let g = random(&mut rng, n, n);
        let a = g.add(&g.transpose()).unwrap();
        let ours = symmetric_eigen(&a, true).unwrap();
        let theirs = sorted(na(&a).symmetric_eigen().eigenvalues.iter().copied().collect());
        let scale = theirs.iter().map(|v| v.abs()).fold(1.0, f64::max);
        assert!(max_gap(&ours.values, &theirs) <= 1e-12 * scale, "n = {n}");
        // A v = lambda v for the returned pairs.
        let vecs = ours.vectors.unwrap();
        for i in 0..n {
            let av = a.matvec(vecs.row(i)).unwrap();
            let err = av.iter().zip(vecs.row(i)).map(|(x, v)| (x - ours.values[i] * v).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-11 * scale);
        }
    }
}

#[test]
fn singular_values_and_condition_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1, 3, 8, 25] {
        let a = random(&mut rng, n, n);
        let ours = singular_values(&a).unwrap();
        let mut theirs: Vec<f64> = na(&a).singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        assert!(max_gap(&ours, &theirs) <= 1e-12 * theirs[0]);
        let kappa = condition_number(&a).unwrap();
        let oracle = theirs[0] / theirs[n - 1];
        assert!((kappa / oracle - 1.0).abs() < 1e-8, "n = {n}: {kappa} vs {oracle}");
    }
}

#[test]
fn linear_solve_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 12, 12).add(&Matrix::identity(12).scale(3.0)).unwrap();
    let b = random(&mut rng, 12, 3);
    let ours = solve(&a, &b).unwrap();
    let theirs = na(&a).lu().solve(&na(&b)).unwrap();
    let theirs: Vec<f64> = theirs.transpose().iter().copied().collect();
    assert!(max_gap(ours.as_slice(), &theirs) <= 1e-12);
}

#[test]
fn pseudo_inverse_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random(&mut rng, 10, 4);
    let a = g.matmul(&g.transpose()).unwrap();
    let ours = pinv_symmetric(&a, 1e-12).unwrap();
    let theirs = na(&a).pseudo_inverse(1e-10).unwrap();
    let theirs: Vec<f64> = theirs.transpose().iter().copied().collect();
    let scale = theirs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(max_gap(ours.as_slice(), &theirs) <= 1e-9 * scale);
}

#[test]
fn kernel_spectrum_matches() {
    let spec = NetworkSpec {
        input_dim: 6,
        hidden_widths: vec![24, 24],
        num_classes: 3,
        activation: Activation::Erf,
        weight_scale: 1.2,
        bias_scale: 0.3,
    };
    let data = gaussian_blobs::<f64>(3, 30, 0, 6, 1.5, 2).unwrap();
    let model = Mlp::new(spec.clone()).unwrap();
    let theta = init_params::<f64>(&spec, 5);
    let kernel = empirical_ntk(&model, theta.as_slice(), &data.train.x, &data.train.x).unwrap();
    let ours = kernel.eigenvalues().unwrap();
    let theirs = sorted(na(&kernel.to_dense()).symmetric_eigen().eigenvalues.iter().copied().collect());
    assert!(max_gap(&ours, &theirs) <= 1e-10 * theirs.last().unwrap());

    let diag = kernel.to_class_diagonal();
    let ours = diag.eigenvalues().unwrap();
    let theirs = sorted(na(&diag.to_dense()).symmetric_eigen().eigenvalues.iter().copied().collect());
    assert!(max_gap(&ours, &theirs) <= 1e-10 * theirs.last().unwrap());
}

#[test]
fn softmax_jacobian_spectrum_matches() {
    let z = [2.0, -1.0, 0.5, 0.0, 3.0];
    let ours = softmax_jacobian(&z).unwrap().eigenvalues().unwrap();
    let theirs = sorted(na(softmax_jacobian(&z).unwrap().matrix()).symmetric_eigen().eigenvalues.iter().copied().collect());
    assert!(max_gap(&sorted(ours), &theirs) <= 1e-14);
}

#[test]
fn hessian_eigenvalues_are_singular_shifts() {
    let spec = NetworkSpec {
        input_dim: 4,
        hidden_widths: vec![32],
        num_classes: 3,
        activation: Activation::Relu,
        weight_scale: 1.0,
        bias_scale: 0.0,
    };
    let data = gaussian_blobs::<f64>(3, 9, 0, 4, 2.0, 7).unwrap();
    let model = Mlp::new(spec.clone()).unwrap();
    let theta = init_params::<f64>(&spec, 1);
    let kernel = empirical_ntk(&model, theta.as_slice(), &data.train.x, &data.train.x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z_star = random(&mut rng, 9, 3).scale(2.0);
    let report = hessian_near_equilibrium(&kernel, &z_star, 1.5, 0.2).unwrap();
    // H is not symmetric; every reported eigenvalue must make H - lambda I singular.
    let h = na(&report.operator);
    let n = h.nrows();
    let scale = report.eigenvalues[0];
    for &lambda in &report.eigenvalues {
        let shifted = &h - DMatrix::<f64>::identity(n, n) * lambda;
        let smallest = shifted.singular_values().min();
        assert!(smallest <= 1e-9 * scale, "lambda {lambda}: sigma_min {smallest}");
    }
    let trace: f64 = (0..n).map(|i| h[(i, i)]).sum();
    let sum: f64 = report.eigenvalues.iter().sum();
    assert!((trace - sum).abs() <= 1e-10 * trace.abs());
    let last = *report.eigenvalues.last().unwrap();
    assert!((report.kappa - scale / last).abs() <= 1e-12 * report.kappa);
}
