//! Softmax cross-entropy, its function-space residual, the softmax Jacobian
//! `diag(sigma) - sigma sigma^T` and the conditioning analysis built on it.
//!
//! Matrices of logits are `M x K` (one row per example). Flattened vectors and
//! operators over the training set use the point-major index `m * K + i`.

use crate::error::{invalid, shape_err, Error, Result};
use crate::kernel::KernelTensor;
use crate::linalg::{condition_number, Matrix, SymmetricEigen, SINGULAR_THRESHOLD};
use crate::scalar::Scalar;

/// One-hot label matrix `Y` (`M x K`).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix<T> {
    values: Matrix<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> LabelMatrix<T> {
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return invalid("at least two classes are required");
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return invalid(format!("label {bad} out of range for {num_classes} classes"));
        }
        let values = Matrix::from_fn(labels.len(), num_classes, |m, i| {
            if labels[m] == i {
                T::one()
            } else {
                T::zero()
            }
        });
        Ok(Self {
            values,
            labels: labels.to_vec(),
        })
    }

    /// Validates that every row is one-hot.
    pub fn from_matrix(values: Matrix<T>) -> Result<Self> {
        let mut labels = Vec::with_capacity(values.rows());
        for m in 0..values.rows() {
            let row = values.row(m);
            let ones: Vec<usize> = (0..row.len()).filter(|&i| row[i] == T::one()).collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return invalid(format!("row {m} of the label matrix is not one-hot"));
            }
            labels.push(ones[0]);
        }
        Ok(Self { values, labels })
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn num_examples(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }
}

/// Row-stochastic matrix of softmax probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix<T>(Matrix<T>);

impl<T: Scalar> ProbMatrix<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix<T> {
        self.0
    }
}

/// Max-shifted softmax of one row of logits.
pub fn softmax<T: Scalar>(z: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); z.len()];
    softmax_into(z, &mut out)?;
    Ok(out)
}

pub(crate) fn softmax_into<T: Scalar>(z: &[T], out: &mut [T]) -> Result<()> {
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN logit passed to softmax".into()));
    }
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if max == T::infinity() {
        // Infinite logits: the mass is shared by the entries at +inf.
        let n = z.iter().filter(|&&v| v == T::infinity()).count();
        for (o, &v) in out.iter_mut().zip(z) {
            *o = if v == T::infinity() {
                T::one() / T::of_usize(n)
            } else {
                T::zero()
            };
        }
        return Ok(());
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Row-wise softmax of an `M x K` logit matrix.
pub fn softmax_rows<T: Scalar>(z: &Matrix<T>) -> Result<ProbMatrix<T>> {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for m in 0..z.rows() {
        softmax_into(z.row(m), out.row_mut(m))?;
    }
    Ok(ProbMatrix(out))
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

fn check_shapes<T: Scalar>(z: &Matrix<T>, y: &LabelMatrix<T>) -> Result<()> {
    if z.shape() != y.matrix().shape() {
        return shape_err(format!(
            "logits {:?} vs labels {:?}",
            z.shape(),
            y.matrix().shape()
        ));
    }
    Ok(())
}

/// Mean negative log-likelihood `-(1/M) sum_m ln sigma(Z_m)_{y_m}`.
pub fn xent_loss<T: Scalar>(z: &Matrix<T>, y: &LabelMatrix<T>) -> Result<T> {
    check_shapes(z, y)?;
    if z.rows() == 0 {
        return Ok(T::zero());
    }
    let total: T = (0..z.rows())
        .map(|m| {
            let row = z.row(m);
            log_sum_exp(row) - row[y.labels()[m]]
        })
        .sum();
    Ok(total / T::of_usize(z.rows()))
}

/// Driving term `Y - sigma(Z)` of the gradient flow.
pub fn residual<T: Scalar>(z: &Matrix<T>, y: &LabelMatrix<T>) -> Result<Matrix<T>> {
    check_shapes(z, y)?;
    let probs = softmax_rows(z)?;
    y.matrix().sub(probs.matrix())
}

/// Fraction of rows whose argmax (first on ties) equals the label.
pub fn accuracy<T: Scalar>(z: &Matrix<T>, labels: &[usize]) -> T {
    if labels.is_empty() {
        return T::nan();
    }
    let hits = (0..z.rows())
        .filter(|&m| argmax(z.row(m)) == labels[m])
        .count();
    T::of_usize(hits) / T::of_usize(labels.len())
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax Jacobian `d sigma / dZ = diag(sigma) - sigma sigma^T` for one row.
///
/// Symmetric and positive semidefinite with the all-ones vector in its null space.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxJacobian<T>(Matrix<T>);

impl<T: Scalar> SoftmaxJacobian<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        SymmetricEigen::values_only(&self.0)
    }
}

pub fn softmax_jacobian<T: Scalar>(z: &[T]) -> Result<SoftmaxJacobian<T>> {
    let s = softmax(z)?;
    Ok(SoftmaxJacobian(jacobian_from_probs(&s)))
}

fn jacobian_from_probs<T: Scalar>(s: &[T]) -> Matrix<T> {
    let k = s.len();
    let mut m = Matrix::from_fn(k, k, |i, j| -s[i] * s[j]);
    // Diagonal as sigma_i (1 - sigma_i) so that it stays accurate when sigma_i -> 1.
    for i in 0..k {
        m[(i, i)] = s[i] * (T::one() - s[i]);
    }
    m
}

/// One approximate eigenpair of the softmax Jacobian in the large-beta regime.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxEigenpair<T> {
    pub value: T,
    pub vector: Vec<T>,
}

/// Leading-order eigenpairs of `d sigma(beta z)` when one logit dominates.
///
/// `z` must be sorted in descending order with a strict gap between the two
/// largest entries. The pairs are returned in the order
/// `(v_1, lambda_1), (v_2, lambda_2), (v_3, lambda_3), ...` with
/// `lambda_1 = 2 e^{-beta (z_1 - z_2)}`, `lambda_2 = -e^{-2 beta (z_1 - z_2)} / 2`
/// and `lambda_i = e^{-beta (z_1 - z_i)}` for `i > 2`. The expansion requires
/// every consecutive gap to be large compared to `1 / beta`.
pub fn dsoftmax_spectrum_largebeta<T: Scalar>(z: &[T], beta: T) -> Result<Vec<ApproxEigenpair<T>>> {
    let k = z.len();
    if k < 2 {
        return invalid("at least two logits are required");
    }
    if beta <= T::zero() {
        return invalid("beta must be positive");
    }
    if z.windows(2).any(|w| w[0] < w[1]) {
        return invalid("logits must be sorted in descending order");
    }
    if z[0] == z[1] {
        return invalid("the two largest logits are tied");
    }
    let half_sqrt2 = T::one() / (T::one() + T::one()).sqrt();
    let gap = z[0] - z[1];
    let two = T::one() + T::one();
    let mut pairs = Vec::with_capacity(k);

    let mut v1 = vec![T::zero(); k];
    v1[0] = half_sqrt2;
    v1[1] = -half_sqrt2;
    pairs.push(ApproxEigenpair {
        value: two * (-beta * gap).exp(),
        vector: v1,
    });

    let mut v2 = vec![T::zero(); k];
    v2[0] = half_sqrt2;
    v2[1] = half_sqrt2;
    pairs.push(ApproxEigenpair {
        value: -(-two * beta * gap).exp() / two,
        vector: v2,
    });

    for i in 2..k {
        let mut v = vec![T::zero(); k];
        v[i] = T::one();
        v[0] = (-beta * (z[1] - z[i])).exp();
        pairs.push(ApproxEigenpair {
            value: (-beta * (z[0] - z[i])).exp(),
            vector: v,
        });
    }
    Ok(pairs)
}

/// Lower and upper bounds on `kappa(AB)` from the condition numbers of the factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionBound<T> {
    pub lower: T,
    pub upper: T,
    pub kappa_a: T,
    pub kappa_b: T,
    /// Set when either factor is numerically singular (its kappa is infinite).
    pub singular: bool,
}

/// `kappa(B)/kappa(A) <= kappa(AB) <= kappa(A) kappa(B)`, with `kappa` the
/// ratio of extreme singular values (the extreme absolute eigenvalues for
/// symmetric factors).
pub fn condition_bound<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<ConditionBound<T>> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return shape_err(format!(
            "condition bound needs equal square factors, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let kappa_a = condition_number(a)?;
    let kappa_b = condition_number(b)?;
    let singular = kappa_a.is_infinite() || kappa_b.is_infinite();
    let (lower, upper) = if singular {
        let lower = if kappa_a.is_infinite() {
            T::zero()
        } else {
            kappa_b / kappa_a
        };
        (lower, T::infinity())
    } else {
        (kappa_b / kappa_a, kappa_a * kappa_b)
    };
    Ok(ConditionBound {
        lower,
        upper,
        kappa_a,
        kappa_b,
        singular,
    })
}

/// Block-diagonal softmax Jacobian over a logit matrix, as an `(M K) x (M K)` operator.
pub fn block_softmax_jacobian<T: Scalar>(z: &Matrix<T>) -> Result<Matrix<T>> {
    let (m, k) = z.shape();
    let mut out = Matrix::zeros(m * k, m * k);
    for p in 0..m {
        let block = softmax_jacobian(z.row(p))?;
        for i in 0..k {
            for j in 0..k {
                out[(p * k + i, p * k + j)] = block.matrix()[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Linearized operator governing the approach to a regularized equilibrium.
#[derive(Clone, Debug)]
pub struct HessianReport<T> {
    /// `beta^2 Theta blockdiag(d sigma(Z*)) + lambda I`, `(M K) x (M K)`.
    pub operator: Matrix<T>,
    /// Eigenvalues in descending order (real and nonnegative for PSD `Theta`).
    pub eigenvalues: Vec<T>,
    /// Ratio of the extreme eigenvalues above the singularity threshold.
    pub kappa: T,
    /// Number of eigenvalues treated as zero.
    pub null_dim: usize,
}

/// Builds the near-equilibrium operator `H = beta^2 Theta D + lambda I`,
/// `D = blockdiag(d sigma(Z*))`, and its spectrum.
///
/// `H` is not symmetric, but for PSD `Theta` it is similar to the symmetric
/// `beta^2 D^{1/2} Theta D^{1/2} + lambda I`, which is what gets diagonalized.
pub fn hessian_near_equilibrium<T: Scalar>(
    theta: &KernelTensor<T>,
    z_star: &Matrix<T>,
    beta: T,
    l2: T,
) -> Result<HessianReport<T>> {
    let (m, k) = z_star.shape();
    if !theta.is_square() || theta.m1() != m || theta.k() != k {
        return shape_err(format!(
            "kernel over {}x{} points with {} classes vs logits {:?}",
            theta.m1(),
            theta.m2(),
            theta.k(),
            z_star.shape()
        ));
    }
    if beta <= T::zero() || l2 < T::zero() {
        return invalid("beta must be positive and lambda nonnegative");
    }
    let n = m * k;
    let dense = theta.to_dense();
    let d = block_softmax_jacobian(z_star)?;
    let beta2 = beta * beta;
    let mut operator = dense.matmul(&d)?.scale(beta2);
    for i in 0..n {
        operator[(i, i)] += l2;
    }

    // Square root of each K x K softmax block.
    let mut d_half = Matrix::zeros(n, n);
    for p in 0..m {
        let block = Matrix::from_fn(k, k, |i, j| d[(p * k + i, p * k + j)]);
        let eig = SymmetricEigen::new(&block)?;
        let vecs = eig.vectors.as_ref().expect("vectors");
        for i in 0..k {
            for j in 0..k {
                let s: T = (0..k)
                    .map(|q| vecs[(q, i)] * eig.values[q].max(T::zero()).sqrt() * vecs[(q, j)])
                    .sum();
                d_half[(p * k + i, p * k + j)] = s;
            }
        }
    }
    let mut sym = d_half.matmul(&dense)?.matmul(&d_half)?.scale(beta2);
    sym.symmetrize();
    for i in 0..n {
        sym[(i, i)] += l2;
    }
    let mut eigenvalues = SymmetricEigen::values_only(&sym)?;
    eigenvalues.reverse();
    let (kappa, null_dim) = spectrum_condition(&eigenvalues);
    Ok(HessianReport {
        operator,
        eigenvalues,
        kappa,
        null_dim,
    })
}

/// Condition number over the part of a spectrum above `SINGULAR_THRESHOLD * max |lambda|`.
pub fn spectrum_condition<T: Scalar>(values: &[T]) -> (T, usize) {
    let max = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if max == T::zero() {
        return (T::nan(), values.len());
    }
    let cutoff = T::of(SINGULAR_THRESHOLD) * max;
    let nonzero: Vec<T> = values
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > cutoff)
        .collect();
    let min = nonzero.iter().fold(T::infinity(), |m, &v| m.min(v));
    (max / min, values.len() - nonzero.len())
}
