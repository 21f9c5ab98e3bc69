//! Empirical kernels against the infinite-width recursion and against each other.

use tempdyn_core::datasets::gaussian_blobs;
use tempdyn_core::kernel::{analytic_ntk_fc, empirical_ntk, KernelTensor};
use tempdyn_core::linalg::Matrix;
use tempdyn_core::model::{correlated_init, init_params, Activation, Mlp, NetworkSpec};

fn spec(act: Activation, widths: Vec<usize>, bias: f64) -> NetworkSpec {
    NetworkSpec {
        input_dim: 6,
        hidden_widths: widths,
        num_classes: 2,
        activation: act,
        weight_scale: 1.3,
        bias_scale: bias,
    }
}

fn inputs() -> Matrix<f64> {
    gaussian_blobs::<f64>(2, 6, 0, 6, 1.0, 3).unwrap().train.x
}

/// Seed-averaged relative Frobenius gap between empirical and analytic kernels.
fn gap(act: Activation, depth: usize, width: usize, bias: f64, seeds: u64) -> f64 {
    let s = spec(act, vec![width; depth], bias);
    let x = inputs();
    let analytic = analytic_ntk_fc::<f64>(&s, &x, &x).unwrap().to_dense();
    let model = Mlp::new(s.clone()).unwrap();
    let mut total = 0.0;
    for seed in 0..seeds {
        let p = init_params::<f64>(&s, seed);
        let emp = empirical_ntk(&model, p.as_slice(), &x, &x).unwrap().to_dense();
        total += emp.sub(&analytic).unwrap().frobenius_norm() / analytic.frobenius_norm();
    }
    total / seeds as f64
}

#[test]
fn relu_kernel_converges_with_width() {
    let narrow = gap(Activation::Relu, 1, 64, 0.0, 4);
    let wide = gap(Activation::Relu, 1, 4096, 0.0, 4);
    assert!(wide < 0.05, "width 4096 gap {wide}");
    // Fluctuations shrink like width^{-1/2}: a 64x wider net should be well over 3x closer.
    assert!(wide < narrow / 3.0, "{narrow} -> {wide}");
}

#[test]
fn deep_erf_kernel_with_bias_converges() {
    let narrow = gap(Activation::Erf, 2, 64, 0.4, 3);
    let wide = gap(Activation::Erf, 2, 2048, 0.4, 3);
    assert!(wide < 0.05, "width 2048 gap {wide}");
    assert!(wide < narrow / 3.0, "{narrow} -> {wide}");
}

#[test]
fn analytic_kernel_is_class_diagonal() {
    let s = spec(Activation::Relu, vec![8], 0.0);
    let x = inputs();
    let k = analytic_ntk_fc::<f64>(&s, &x, &x).unwrap();
    assert_eq!(k.off_class_ratio(), 0.0);
    let dense = k.to_dense();
    for a in 0..6 {
        for b in 0..6 {
            assert_eq!(dense[(a * 2, b * 2)], dense[(a * 2 + 1, b * 2 + 1)]);
        }
    }
}

#[test]
fn cross_kernel_is_a_block_of_the_joint_kernel() {
    let s = spec(Activation::Erf, vec![16], 0.1);
    let model = Mlp::new(s.clone()).unwrap();
    let p = init_params::<f64>(&s, 1);
    let x = inputs();
    let x1 = Matrix::from_fn(2, 6, |i, j| x[(i, j)]);
    let x2 = Matrix::from_fn(4, 6, |i, j| x[(i + 2, j)]);
    let joint = empirical_ntk(&model, p.as_slice(), &x, &x).unwrap();
    let cross: KernelTensor<f64> = empirical_ntk(&model, p.as_slice(), &x1, &x2).unwrap();
    assert_eq!((cross.m1(), cross.m2()), (2, 4));
    for a in 0..2 {
        for b in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    let v = joint.entry(a, i, b + 2, j);
                    assert!((cross.entry(a, i, b, j) - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn correlation_leaves_the_kernel_untouched() {
    let s = spec(Activation::Relu, vec![32], 0.0);
    let x = inputs();
    let base = correlated_init::<f64>(&s, 9, 0.0).unwrap();
    let reference = empirical_ntk(&base, base.trainable_init().as_slice(), &x, &x).unwrap();
    for c in [-1.0, -0.3, 0.7, 1.0] {
        let m = correlated_init::<f64>(&s, 9, c).unwrap();
        let k = empirical_ntk(&m, m.trainable_init().as_slice(), &x, &x).unwrap();
        assert_eq!(k.values().as_slice(), reference.values().as_slice());
    }
}
