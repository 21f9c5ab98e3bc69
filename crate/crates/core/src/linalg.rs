//! Dense row-major matrices and the handful of factorizations the analysis needs:
//! a symmetric eigensolver (Householder tridiagonalization followed by implicit QL),
//! LU with partial pivoting, symmetric pseudo-inverses and condition numbers.

use std::ops::{Index, IndexMut};

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "{:?} vs {:?} in elementwise op",
                self.shape(),
                other.shape()
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return shape_err(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return shape_err(format!(
                "cannot apply {:?} to a vector of length {}",
                self.shape(),
                v.len()
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `self^T v`.
    pub fn tmatvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.rows != v.len() {
            return shape_err(format!(
                "cannot apply transpose of {:?} to a vector of length {}",
                self.shape(),
                v.len()
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &s) in v.iter().enumerate() {
            if s == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += s * a;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> T {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum asymmetry `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> T {
        if !self.is_square() {
            return T::infinity();
        }
        let scale = self.max_abs();
        if scale == T::zero() {
            return T::zero();
        }
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Replaces the matrix with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (r2, c2) = other.shape();
        Self::from_fn(self.rows * r2, self.cols * c2, |r, c| {
            self[(r / r2, c / c2)] * other[(r % r2, c % c2)]
        })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Euclidean norm, scaled to avoid overflow for large entries.
pub fn norm<T: Scalar>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return scale;
    }
    let s: T = v.iter().map(|&x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Eigenvectors stored as rows: `vectors.row(i)` pairs with `values[i]`.
    /// Empty when only eigenvalues were requested.
    pub vectors: Option<Matrix<T>>,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        symmetric_eigen(a, true)
    }

    pub fn values_only(a: &Matrix<T>) -> Result<Vec<T>> {
        Ok(symmetric_eigen(a, false)?.values)
    }

    pub fn max(&self) -> T {
        *self.values.last().unwrap_or(&T::zero())
    }

    pub fn min(&self) -> T {
        *self.values.first().unwrap_or(&T::zero())
    }
}

/// Symmetric eigensolver. Only the lower triangle is read.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>, want_vectors: bool) -> Result<SymmetricEigen<T>> {
    if !a.is_square() {
        return shape_err(format!("eigen-decomposition of non-square {:?}", a.shape()));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(SymmetricEigen {
            values: vec![],
            vectors: want_vectors.then(|| Matrix::zeros(0, 0)),
        });
    }
    let mut v = Matrix::from_fn(n, n, |i, j| if j <= i { a[(i, j)] } else { a[(j, i)] });
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e, want_vectors);
    // Eigenvectors of the tridiagonal problem are accumulated into the rows of
    // `vt`, which keeps the Givens rotations on contiguous memory.
    let mut vt = if want_vectors { Some(v.transpose()) } else { None };
    tridiagonal_ql(&mut d, &mut e, vt.as_mut())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = vt.map(|vt| {
        let mut out = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(vt.row(src));
        }
        out
    });
    Ok(SymmetricEigen { values, vectors })
}

// Householder reduction to tridiagonal form (EISPACK tred2).
fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T], accumulate: bool) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }

    if accumulate {
        for i in 0..(n - 1) {
            v[(n - 1, i)] = v[(i, i)];
            v[(i, i)] = T::one();
            let h = d[i + 1];
            if h != T::zero() {
                for k in 0..=i {
                    d[k] = v[(k, i + 1)] / h;
                }
                for j in 0..=i {
                    let mut g = T::zero();
                    for k in 0..=i {
                        g += v[(k, i + 1)] * v[(k, j)];
                    }
                    for k in 0..=i {
                        let upd = g * d[k];
                        v[(k, j)] -= upd;
                    }
                }
            }
            for k in 0..=i {
                v[(k, i + 1)] = T::zero();
            }
        }
        for j in 0..n {
            d[j] = v[(n - 1, j)];
            v[(n - 1, j)] = T::zero();
        }
        v[(n - 1, n - 1)] = T::one();
    } else {
        // Without accumulation the diagonal still has to be read back.
        for i in 0..(n - 1) {
            let diag = v[(i, i)];
            v[(n - 1, i)] = diag;
        }
        for j in 0..n {
            d[j] = v[(n - 1, j)];
        }
        d[n - 1] = v[(n - 1, n - 1)];
    }
    e[0] = T::zero();
}

// Implicit QL iterations on the tridiagonal matrix (EISPACK tql2).
fn tridiagonal_ql<T: Scalar>(d: &mut [T], e: &mut [T], mut vt: Option<&mut Matrix<T>>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NoConvergence {
                        iterations: iter,
                        residual: e[l].to_f64_lossy(),
                    });
                }
                let mut g = d[l];
                let two = T::one() + T::one();
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(vt) = vt.as_deref_mut() {
                        rotate_rows(vt, i, c, s);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

#[inline]
fn rotate_rows<T: Scalar>(vt: &mut Matrix<T>, i: usize, c: T, s: T) {
    let n = vt.cols();
    let (head, tail) = vt.as_mut_slice().split_at_mut((i + 1) * n);
    let row_i = &mut head[i * n..];
    let row_next = &mut tail[..n];
    for (a, b) in row_i.iter_mut().zip(row_next.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return shape_err(format!("LU of non-square {:?}", a.shape()));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        let tiny = T::epsilon() * T::of_usize(n.max(1)) * scale;
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tiny || pmax == T::zero() {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            if piv != k {
                perm.swap(piv, k);
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(piv, c)];
                    lu[(piv, c)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for r in (k + 1)..n {
                let factor = lu[(r, k)] / pivot;
                lu[(r, k)] = factor;
                if factor != T::zero() {
                    for c in (k + 1)..n {
                        let upd = factor * lu[(k, c)];
                        lu[(r, c)] -= upd;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.lu.rows();
        if b.len() != n {
            return shape_err(format!("rhs of length {} for {n}x{n} system", b.len()));
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.lu.rows();
        if b.rows() != n {
            return shape_err(format!("rhs with {} rows for {n}x{n} system", b.rows()));
        }
        let mut out = Matrix::zeros(n, b.cols());
        for c in 0..b.cols() {
            let x = self.solve_vec(&b.column(c))?;
            for (r, v) in x.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }
}

pub fn solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::new(a)?.solve(b)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix; eigenvalues with
/// `|lambda| <= rel_cutoff * max |lambda|` are treated as zero.
pub fn pinv_symmetric<T: Scalar>(a: &Matrix<T>, rel_cutoff: T) -> Result<Matrix<T>> {
    let eig = SymmetricEigen::new(a)?;
    let vecs = eig.vectors.as_ref().expect("requested vectors");
    let n = a.rows();
    let lam_max = eig.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let cutoff = rel_cutoff * lam_max;
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam.abs() <= cutoff || lam == T::zero() {
            continue;
        }
        let v = vecs.row(k);
        let inv = T::one() / lam;
        for i in 0..n {
            let vi = v[i] * inv;
            if vi == T::zero() {
                continue;
            }
            let row = out.row_mut(i);
            for (o, &vj) in row.iter_mut().zip(v) {
                *o += vi * vj;
            }
        }
    }
    Ok(out)
}

/// Singular values of a square matrix in descending order.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    let gram = a.transpose().matmul(a)?;
    let mut s: Vec<T> = SymmetricEigen::values_only(&gram)?
        .into_iter()
        .map(|v| v.max(T::zero()).sqrt())
        .collect();
    s.reverse();
    Ok(s)
}

/// Relative threshold below which an eigenvalue or singular value counts as zero.
pub const SINGULAR_THRESHOLD: f64 = 1e-14;

/// Condition number `sigma_max / sigma_min`; infinite when the matrix is
/// numerically singular.
pub fn condition_number<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    if !a.is_square() {
        return invalid(format!("condition number of non-square {:?}", a.shape()));
    }
    let s = singular_values(a)?;
    let (max, min) = (s[0], *s.last().expect("nonempty"));
    if max == T::zero() || min <= T::of(SINGULAR_THRESHOLD) * max {
        return Ok(T::infinity());
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        m.symmetrize();
        m
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        for (n, seed) in [(1, 0), (2, 1), (5, 2), (17, 3), (40, 4)] {
            let a = random_symmetric(n, seed);
            let eig = SymmetricEigen::new(&a).unwrap();
            let v = eig.vectors.as_ref().unwrap();
            for i in 0..n {
                for j in 0..n {
                    let rec: f64 = (0..n).map(|k| v[(k, i)] * eig.values[k] * v[(k, j)]).sum();
                    assert!((rec - a[(i, j)]).abs() < 1e-12, "n={n} ({i},{j})");
                }
            }
            for w in eig.values.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn values_only_agrees_with_full() {
        let a = random_symmetric(23, 9);
        let full = SymmetricEigen::new(&a).unwrap().values;
        let only = SymmetricEigen::values_only(&a).unwrap();
        for (x, y) in full.iter().zip(&only) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_of_diagonal_and_zero() {
        let a = Matrix::diag(&[3.0, -1.0, 2.0]);
        assert_eq!(SymmetricEigen::values_only(&a).unwrap(), vec![-1.0, 2.0, 3.0]);
        let z = Matrix::<f64>::zeros(4, 4);
        assert!(SymmetricEigen::values_only(&z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigen_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let v = SymmetricEigen::values_only(&a).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn lu_solves_and_flags_singular() {
        let a = Matrix::from_rows(&[vec![4.0f64, 1.0], vec![2.0, 3.0]]).unwrap();
        let x = Lu::new(&a).unwrap().solve_vec(&[1.0, 2.0]).unwrap();
        assert!((x[0] - 0.1).abs() < 1e-15 && (x[1] - 0.6).abs() < 1e-15);
        let s = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(Lu::new(&s), Err(Error::Singular(_))));
    }

    #[test]
    fn pinv_of_rank_deficient() {
        // P = u u^T with |u| = 1 is its own pseudo-inverse.
        let u = [0.6f64, 0.8];
        let p = Matrix::from_fn(2, 2, |i, j| u[i] * u[j]);
        let pi = pinv_symmetric(&p, 1e-12).unwrap();
        for (a, b) in pi.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn condition_numbers() {
        let a = Matrix::diag(&[1.0f64, -4.0]);
        assert!((condition_number(&a).unwrap() - 4.0).abs() < 1e-14);
        let s = Matrix::diag(&[1.0f64, 0.0]);
        assert!(condition_number(&s).unwrap().is_infinite());
    }

    #[test]
    fn kron_and_symmetry() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let k = a.kron(&Matrix::identity(2));
        assert_eq!(k[(2, 0)], 3.0);
        assert_eq!(k[(2, 1)], 0.0);
        assert!(a.asymmetry() > 0.0);
        let mut b = a.clone();
        b.symmetrize();
        assert_eq!(b.asymmetry(), 0.0);
    }
}
