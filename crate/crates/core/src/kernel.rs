//! Neural tangent kernels.
//!
//! A kernel between input sets of sizes `M1` and `M2` over `K` classes is an
//! `(M1 K) x (M2 K)` matrix with row index `m * K + i`. Kernels that are the
//! identity in class space are stored as their `M1 x M2` input block only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::linalg::{dot, pinv_symmetric, Matrix, SymmetricEigen};
use crate::model::{batch_jacobian, Activation, Model, NetworkSpec};
use crate::scalar::Scalar;

/// Eigenvalues below this fraction of the largest are dropped by [`transfer_to_test`].
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelStructure {
    Dense,
    BlockDiagonalInClasses,
}

#[derive(Clone, Debug, PartialEq)]
enum Repr<T> {
    Dense(Matrix<T>),
    ClassDiagonal(Matrix<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor<T> {
    m1: usize,
    m2: usize,
    k: usize,
    repr: Repr<T>,
}

/// Symmetry and definiteness diagnostics of a square kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdReport<T> {
    pub asymmetry: T,
    pub min_eigenvalue: T,
    pub max_eigenvalue: T,
}

impl<T: Scalar> KernelTensor<T> {
    pub fn dense(m1: usize, m2: usize, k: usize, values: Matrix<T>) -> Result<Self> {
        if values.shape() != (m1 * k, m2 * k) {
            return shape_err(format!(
                "kernel values {:?} for M1={m1}, M2={m2}, K={k}",
                values.shape()
            ));
        }
        Ok(Self {
            m1,
            m2,
            k,
            repr: Repr::Dense(values),
        })
    }

    /// `Id_K ⊗ block` with `block` of shape `M1 x M2`.
    pub fn class_diagonal(k: usize, block: Matrix<T>) -> Result<Self> {
        if k == 0 {
            return invalid("kernel needs at least one class");
        }
        Ok(Self {
            m1: block.rows(),
            m2: block.cols(),
            k,
            repr: Repr::ClassDiagonal(block),
        })
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_square(&self) -> bool {
        self.m1 == self.m2
    }

    pub fn structure(&self) -> KernelStructure {
        match self.repr {
            Repr::Dense(_) => KernelStructure::Dense,
            Repr::ClassDiagonal(_) => KernelStructure::BlockDiagonalInClasses,
        }
    }

    /// The stored matrix: the full kernel when dense, the input block otherwise.
    pub fn values(&self) -> &Matrix<T> {
        match &self.repr {
            Repr::Dense(m) | Repr::ClassDiagonal(m) => m,
        }
    }

    /// `Theta_ij(x_a, x_b)`.
    pub fn entry(&self, a: usize, i: usize, b: usize, j: usize) -> T {
        match &self.repr {
            Repr::Dense(m) => m[(a * self.k + i, b * self.k + j)],
            Repr::ClassDiagonal(m) => {
                if i == j {
                    m[(a, b)]
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::ClassDiagonal(b) => {
                let k = self.k;
                let mut out = Matrix::zeros(self.m1 * k, self.m2 * k);
                for a in 0..self.m1 {
                    for c in 0..self.m2 {
                        let v = b[(a, c)];
                        for i in 0..k {
                            out[(a * k + i, c * k + i)] = v;
                        }
                    }
                }
                out
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m.transpose()),
            Repr::ClassDiagonal(m) => Repr::ClassDiagonal(m.transpose()),
        };
        Self {
            m1: self.m2,
            m2: self.m1,
            k: self.k,
            repr,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m.scale(s)),
            Repr::ClassDiagonal(m) => Repr::ClassDiagonal(m.scale(s)),
        };
        Self { repr, ..*self }
    }

    /// `M1 x M2` average of the diagonal class blocks.
    pub fn class_average(&self) -> Matrix<T> {
        match &self.repr {
            Repr::ClassDiagonal(b) => b.clone(),
            Repr::Dense(m) => {
                let k = self.k;
                let inv = T::one() / T::of_usize(k);
                Matrix::from_fn(self.m1, self.m2, |a, b| {
                    (0..k).map(|i| m[(a * k + i, b * k + i)]).sum::<T>() * inv
                })
            }
        }
    }

    /// Same input block on every class, zero between classes.
    pub fn to_class_diagonal(&self) -> Self {
        Self {
            repr: Repr::ClassDiagonal(self.class_average()),
            ..*self
        }
    }

    /// Frobenius norm of the off-class entries relative to the class-diagonal ones.
    pub fn off_class_ratio(&self) -> T {
        match &self.repr {
            Repr::ClassDiagonal(_) => T::zero(),
            Repr::Dense(m) => {
                let k = self.k;
                let (mut on, mut off) = (T::zero(), T::zero());
                for r in 0..m.rows() {
                    for (c, &v) in m.row(r).iter().enumerate() {
                        if r % k == c % k {
                            on += v * v;
                        } else {
                            off += v * v;
                        }
                    }
                }
                if on == T::zero() {
                    if off == T::zero() {
                        T::zero()
                    } else {
                        T::infinity()
                    }
                } else {
                    (off / on).sqrt()
                }
            }
        }
    }

    pub fn frobenius_norm(&self) -> T {
        match &self.repr {
            Repr::Dense(m) => m.frobenius_norm(),
            Repr::ClassDiagonal(b) => b.frobenius_norm() * T::of_usize(self.k).sqrt(),
        }
    }

    /// Ascending eigenvalues of a square kernel, class multiplicities included.
    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        if !self.is_square() {
            return shape_err("eigenvalues of a non-square kernel");
        }
        match &self.repr {
            Repr::Dense(m) => SymmetricEigen::values_only(m),
            Repr::ClassDiagonal(b) => {
                let base = SymmetricEigen::values_only(b)?;
                let mut all: Vec<T> = base
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, self.k))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
                Ok(all)
            }
        }
    }

    pub fn max_eigenvalue(&self) -> Result<T> {
        Ok(self.eigenvalues()?.last().copied().unwrap_or_else(T::zero))
    }

    pub fn psd_report(&self) -> Result<PsdReport<T>> {
        let values = self.eigenvalues()?;
        Ok(PsdReport {
            asymmetry: self.values().asymmetry(),
            min_eigenvalue: values.first().copied().unwrap_or_else(T::zero),
            max_eigenvalue: values.last().copied().unwrap_or_else(T::zero),
        })
    }
}

/// `A B^T` computed row-parallel.
fn gram<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let cols = b.rows();
    let data: Vec<T> = (0..a.rows())
        .into_par_iter()
        .flat_map_iter(|r| {
            let ar = a.row(r);
            (0..cols).map(move |c| dot(ar, b.row(c)))
        })
        .collect();
    Matrix::new(a.rows(), cols, data).expect("gram shape")
}

/// Empirical NTK `J(X1) J(X2)^T`, symmetrized when both input sets are equal.
pub fn empirical_ntk<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    x1: &Matrix<T>,
    x2: &Matrix<T>,
) -> Result<KernelTensor<T>> {
    let k = model.num_classes();
    let j1 = batch_jacobian(model, params, x1)?;
    if x1 == x2 {
        let mut values = gram(&j1, &j1);
        values.symmetrize();
        return KernelTensor::dense(x1.rows(), x1.rows(), k, values);
    }
    let j2 = batch_jacobian(model, params, x2)?;
    KernelTensor::dense(x1.rows(), x2.rows(), k, gram(&j1, &j2))
}

/// Gram of precomputed stacked Jacobians (`(M K) x P` each).
pub fn ntk_from_jacobians<T: Scalar>(
    j1: &Matrix<T>,
    j2: &Matrix<T>,
    k: usize,
) -> Result<KernelTensor<T>> {
    if j1.cols() != j2.cols() || !j1.rows().is_multiple_of(k) || !j2.rows().is_multiple_of(k) {
        return shape_err("Jacobians do not stack into a kernel");
    }
    let mut values = gram(j1, j2);
    if j1 == j2 {
        values.symmetrize();
    }
    KernelTensor::dense(j1.rows() / k, j2.rows() / k, k, values)
}

/// Infinite-width NTK of a fully-connected network, `Id_K ⊗ Theta_x`.
pub fn analytic_ntk_fc<T: Scalar>(
    spec: &NetworkSpec,
    x1: &Matrix<T>,
    x2: &Matrix<T>,
) -> Result<KernelTensor<T>> {
    spec.validate()?;
    if x1.cols() != spec.input_dim || x2.cols() != spec.input_dim {
        return shape_err("input dimension differs from the network spec");
    }
    let n = T::of_usize(spec.input_dim);
    let sw2 = T::of(spec.weight_scale * spec.weight_scale);
    let sb2 = T::of(spec.bias_scale * spec.bias_scale);
    let depth = spec.hidden_widths.len();
    let act = spec.activation;
    let input_cov = |a: &[T], b: &[T]| sw2 * dot(a, b) / n + sb2;
    let self1: Vec<T> = (0..x1.rows()).map(|a| input_cov(x1.row(a), x1.row(a))).collect();
    let self2: Vec<T> = (0..x2.rows()).map(|b| input_cov(x2.row(b), x2.row(b))).collect();
    let data: Vec<T> = (0..x1.rows())
        .into_par_iter()
        .flat_map_iter(|a| {
            let self1 = &self1;
            let self2 = &self2;
            (0..x2.rows()).map(move |b| {
                let mut s11 = self1[a];
                let mut s22 = self2[b];
                let mut s12 = input_cov(x1.row(a), x2.row(b));
                let mut ntk = s12;
                for _ in 0..depth {
                    let (t, tdot, t11, t22) = expectations(act, s11, s22, s12);
                    s12 = sw2 * t + sb2;
                    s11 = sw2 * t11 + sb2;
                    s22 = sw2 * t22 + sb2;
                    ntk = s12 + sw2 * tdot * ntk;
                }
                ntk
            })
        })
        .collect();
    KernelTensor::class_diagonal(spec.num_classes, Matrix::new(x1.rows(), x2.rows(), data)?)
}

/// `E[phi(u) phi(v)]`, `E[phi'(u) phi'(v)]`, `E[phi(u)^2]`, `E[phi(v)^2]`
/// for a centred Gaussian pair with the given covariance.
fn expectations<T: Scalar>(act: Activation, s11: T, s22: T, s12: T) -> (T, T, T, T) {
    let pi = T::PI();
    let two = T::of(2.0);
    match act {
        Activation::Relu => {
            let norm = (s11 * s22).sqrt();
            let (t, tdot) = if norm > T::zero() {
                let cos = (s12 / norm).max(-T::one()).min(T::one());
                let angle = cos.acos();
                (
                    norm / (two * pi) * (angle.sin() + (pi - angle) * cos),
                    (pi - angle) / (two * pi),
                )
            } else {
                (T::zero(), T::zero())
            };
            (t, tdot, s11 / two, s22 / two)
        }
        Activation::Erf => {
            let d1 = T::one() + two * s11;
            let d2 = T::one() + two * s22;
            let t = two / pi * (two * s12 / (d1 * d2).sqrt()).asin();
            let tdot = T::of(4.0) / pi / (d1 * d2 - T::of(4.0) * s12 * s12).sqrt();
            let t11 = two / pi * (two * s11 / d1).asin();
            let t22 = two / pi * (two * s22 / d2).asin();
            (t, tdot, t11, t22)
        }
    }
}

/// `sum_{b, j} Theta_ij(x_a, x_b) R_bj`; `r` is `M2 x K`, the result `M1 x K`.
pub fn kernel_apply<T: Scalar>(theta: &KernelTensor<T>, r: &Matrix<T>) -> Result<Matrix<T>> {
    if r.shape() != (theta.m2, theta.k) {
        return shape_err(format!(
            "residual {:?} for a kernel with M2={}, K={}",
            r.shape(),
            theta.m2,
            theta.k
        ));
    }
    match &theta.repr {
        Repr::Dense(m) => Matrix::new(theta.m1, theta.k, m.matvec(r.as_slice())?),
        Repr::ClassDiagonal(b) => b.matmul(r),
    }
}

/// Logit change at test inputs implied by a training-set change,
/// `Theta(x, X) Theta(X, X)^+ dZ`.
pub fn transfer_to_test<T: Scalar>(
    theta_test_train: &KernelTensor<T>,
    theta_train: &KernelTensor<T>,
    dz_train: &Matrix<T>,
) -> Result<Matrix<T>> {
    if !theta_train.is_square() {
        return shape_err("training kernel must be square");
    }
    if theta_test_train.m2 != theta_train.m1 || theta_test_train.k != theta_train.k {
        return shape_err("test and training kernels disagree on the training set");
    }
    if dz_train.shape() != (theta_train.m1, theta_train.k) {
        return shape_err("training logit change has the wrong shape");
    }
    let cutoff = T::of(PINV_CUTOFF);
    match (&theta_test_train.repr, &theta_train.repr) {
        (Repr::ClassDiagonal(cross), Repr::ClassDiagonal(train)) => {
            let pinv = pinv_symmetric(train, cutoff)?;
            cross.matmul(&pinv.matmul(dz_train)?)
        }
        _ => {
            let pinv = pinv_symmetric(&theta_train.to_dense(), cutoff)?;
            let coef = pinv.matvec(dz_train.as_slice())?;
            let out = theta_test_train.to_dense().matvec(&coef)?;
            Matrix::new(theta_test_train.m1, theta_test_train.k, out)
        }
    }
}
