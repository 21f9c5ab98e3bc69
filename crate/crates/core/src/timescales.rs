//! Early-learning and nonlinear timescales, and trajectory comparisons.
//!
//! Timescales are reported in units of `eta_tilde t` unless a field says raw.

use serde::{Deserialize, Serialize};

use crate::datasets::Split;
use crate::dynamics::{Curve, Trajectory};
use crate::error::{invalid, shape_err, Error, Result};
use crate::kernel::{kernel_apply, ntk_from_jacobians, KernelTensor};
use crate::linalg::{norm, Matrix};
use crate::loss::{residual, LabelMatrix};
use crate::model::{batch_jacobian, Model};
use crate::scalar::Scalar;

/// Default relative threshold of [`deviation_time`].
pub const DEFAULT_DEVIATION_TOL: f64 = 0.05;
/// Relative step of the kernel finite difference, as a fraction of `|theta|`.
pub const KERNEL_FD_STEP: f64 = 1e-4;
/// Largest relative change tolerated when the finite-difference step is halved.
pub const RICHARDSON_TOL: f64 = 0.05;
/// Halvings of the difference step tried before giving up on agreement.
pub const MAX_STEP_HALVINGS: usize = 6;

pub const TIMESCALE_HEADER: [&str; 7] = [
    "beta", "z0_norm", "eta_tilde", "tau_z", "tau_nl", "tau_z_raw", "tau_nl_raw",
];

/// `eta_tilde = alpha beta^2`.
pub fn effective_lr<T: Scalar>(alpha: T, beta: T) -> Result<T> {
    if !(alpha > T::zero()) || !(beta > T::zero()) {
        return invalid("alpha and beta must be positive");
    }
    Ok(alpha * beta * beta)
}

/// `(1 / eta_tilde) |Z0|_F / |Theta (Y - sigma(Z0))|_F`, in raw time.
/// Multiply by `eta_tilde` for the value in `eta_tilde t` units.
pub fn tau_z<T: Scalar>(
    theta: &KernelTensor<T>,
    z0: &Matrix<T>,
    y: &LabelMatrix<T>,
    eta_tilde: T,
) -> Result<T> {
    if !(eta_tilde > T::zero()) {
        return invalid("eta_tilde must be positive");
    }
    if !theta.is_square() || theta.m1() != z0.rows() || theta.k() != z0.cols() {
        return shape_err("kernel and logits disagree in shape");
    }
    let z_norm = z0.frobenius_norm();
    if z_norm == T::zero() {
        return Ok(T::zero());
    }
    let drive = kernel_apply(theta, &residual(z0, y)?)?.frobenius_norm();
    if drive == T::zero() {
        return Err(Error::Saturated("kernel-projected residual is exactly zero".into()));
    }
    Ok(z_norm / (drive * eta_tilde))
}

/// Finite-difference estimate of the nonlinear timescale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauNl<T> {
    /// `|Z'|_F / |Z''_nl|_F` in `eta_tilde t` units; infinite below the noise floor.
    pub tau_nl: T,
    /// `|Theta r|_F`, the initial logit velocity in `eta_tilde t` units.
    pub zdot_norm: T,
    /// `|(dTheta/ds) r|_F` at the finite-difference step.
    pub zddot_norm: T,
    /// Relative change of `Z''_nl` when the step is halved.
    pub richardson_change: T,
    /// The step pair agrees within [`RICHARDSON_TOL`].
    pub richardson_ok: bool,
    /// `Z''_nl` is indistinguishable from rounding noise in the kernel difference.
    pub below_noise_floor: bool,
    pub step: T,
}

/// Everything needed to evaluate both timescales at one initialization.
struct Linearization<T> {
    theta: KernelTensor<T>,
    z0: Matrix<T>,
    r: Matrix<T>,
    jac: Matrix<T>,
}

fn linearize<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    data: &Split<T>,
    beta: T,
) -> Result<Linearization<T>> {
    let k = model.num_classes();
    let z0 = model.forward(params, &data.x)?.scale(beta);
    let r = residual(&z0, &data.y)?;
    let jac = batch_jacobian(model, params, &data.x)?;
    let theta = ntk_from_jacobians(&jac, &jac, k)?;
    Ok(Linearization { theta, z0, r, jac })
}

fn tau_nl_from<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    data: &Split<T>,
    beta: T,
    lin: &Linearization<T>,
) -> Result<TauNl<T>> {
    let k = model.num_classes();
    let zdot = kernel_apply(&lin.theta, &lin.r)?;
    let zdot_norm = zdot.frobenius_norm();
    // Parameter velocity per unit eta_tilde t: J^T r / beta.
    let velocity: Vec<T> = lin
        .jac
        .tmatvec(lin.r.as_slice())?
        .into_iter()
        .map(|v| v / beta)
        .collect();
    let v_norm = norm(&velocity);
    let p_norm = norm(params);
    let infinite = |step: T| TauNl {
        tau_nl: T::infinity(),
        zdot_norm,
        zddot_norm: T::zero(),
        richardson_change: T::zero(),
        richardson_ok: true,
        below_noise_floor: true,
        step,
    };
    if v_norm == T::zero() {
        return Ok(infinite(T::zero()));
    }
    let base = if p_norm > T::zero() { p_norm } else { T::one() };
    let step = T::of(KERNEL_FD_STEP) * base / v_norm;

    let zddot_at = |h: T| -> Result<Matrix<T>> {
        let shift = |sgn: T| -> Vec<T> {
            params
                .iter()
                .zip(&velocity)
                .map(|(&p, &v)| p + sgn * h * v)
                .collect()
        };
        let jp = batch_jacobian(model, &shift(T::one()), &data.x)?;
        let jm = batch_jacobian(model, &shift(-T::one()), &data.x)?;
        let kp = ntk_from_jacobians(&jp, &jp, k)?;
        let km = ntk_from_jacobians(&jm, &jm, k)?;
        let dk = kp.values().sub(km.values())?.scale(T::one() / (T::of(2.0) * h));
        let dk = KernelTensor::dense(lin.theta.m1(), lin.theta.m2(), k, dk)?;
        kernel_apply(&dk, &lin.r)
    };
    // A ReLU kink crossed inside the stencil shows up as a jump of order 1/h,
    // so the step is halved until two consecutive estimates agree.
    let mut h = step;
    let mut z1 = zddot_at(h)?;
    let mut change = T::infinity();
    for _ in 0..=MAX_STEP_HALVINGS {
        let zddot_norm = z1.frobenius_norm();
        // Rounding in each kernel entry is about eps |Theta|; the difference quotient amplifies it by 1/h.
        let floor = T::of(1e3) * T::epsilon() * lin.theta.frobenius_norm() * lin.r.frobenius_norm() / h;
        if !(zddot_norm > floor) {
            return Ok(TauNl {
                zddot_norm,
                ..infinite(h)
            });
        }
        let z2 = zddot_at(h * T::of(0.5))?;
        change = z1.sub(&z2)?.frobenius_norm() / zddot_norm;
        if change < T::of(RICHARDSON_TOL) {
            break;
        }
        h *= T::of(0.5);
        z1 = z2;
    }
    let zddot_norm = z1.frobenius_norm();
    Ok(TauNl {
        tau_nl: zdot_norm / zddot_norm,
        zdot_norm,
        zddot_norm,
        richardson_change: change,
        richardson_ok: change < T::of(RICHARDSON_TOL),
        below_noise_floor: false,
        step: h,
    })
}

/// Nonlinear timescale `|Z'|/|Z''_nl|` at `params`, with `Z''_nl = (dTheta/ds) r`
/// taken by a symmetric kernel difference along the parameter velocity.
pub fn tau_nl<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    data: &Split<T>,
    beta: T,
) -> Result<TauNl<T>> {
    if !(beta > T::zero()) {
        return invalid("beta must be positive");
    }
    let lin = linearize(model, params, data, beta)?;
    tau_nl_from(model, params, data, beta, &lin)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimescaleReport {
    pub beta: f64,
    pub z0_norm: f64,
    pub eta_tilde: f64,
    pub tau_z: f64,
    pub tau_nl: f64,
    pub tau_z_raw: f64,
    pub tau_nl_raw: f64,
    pub tau_nl_below_noise: bool,
    pub richardson_ok: bool,
}

impl TimescaleReport {
    pub fn csv_row(&self) -> [String; 7] {
        [
            self.beta.to_text(),
            self.z0_norm.to_text(),
            self.eta_tilde.to_text(),
            self.tau_z.to_text(),
            self.tau_nl.to_text(),
            self.tau_z_raw.to_text(),
            self.tau_nl_raw.to_text(),
        ]
    }
}

/// Both timescales at one initialization.
pub fn timescale_report<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    data: &Split<T>,
    beta: T,
    eta_tilde: T,
) -> Result<TimescaleReport> {
    if !(eta_tilde > T::zero()) || !(beta > T::zero()) {
        return invalid("beta and eta_tilde must be positive");
    }
    let lin = linearize(model, params, data, beta)?;
    let raw_z = tau_z(&lin.theta, &lin.z0, &data.y, eta_tilde)?;
    let nl = tau_nl_from(model, params, data, beta, &lin)?;
    Ok(TimescaleReport {
        beta: beta.to_f64_lossy(),
        z0_norm: lin.z0.frobenius_norm().to_f64_lossy(),
        eta_tilde: eta_tilde.to_f64_lossy(),
        tau_z: (raw_z * eta_tilde).to_f64_lossy(),
        tau_nl: nl.tau_nl.to_f64_lossy(),
        tau_z_raw: raw_z.to_f64_lossy(),
        tau_nl_raw: (nl.tau_nl / eta_tilde).to_f64_lossy(),
        tau_nl_below_noise: nl.below_noise_floor,
        richardson_ok: nl.richardson_ok,
    })
}

/// First recorded `eta_tilde t` at which `|Z_nl - Z_lin|_F / |Z_lin|_F > tol`.
/// A diverged nonlinear record counts as deviated.
pub fn deviation_time<T: Scalar>(
    nonlinear: &Trajectory<T>,
    linearized: &Trajectory<T>,
    tol: T,
) -> Result<Option<T>> {
    if !(tol >= T::zero()) {
        return invalid("tolerance must be nonnegative");
    }
    let n = nonlinear.records.len().min(linearized.records.len());
    for i in 0..n {
        let (a, b) = (&nonlinear.records[i], &linearized.records[i]);
        let scale = a.eta_t.abs().max(b.eta_t.abs()).max(T::min_positive_value());
        if (a.eta_t - b.eta_t).abs() > T::of(1e-12) * scale {
            return shape_err(format!(
                "recording grids differ at record {i}: {} vs {}",
                a.eta_t, b.eta_t
            ));
        }
        if a.diverged {
            return Ok(Some(a.eta_t));
        }
        if b.diverged {
            return Ok(None);
        }
        let diff = nonlinear.logits[i].sub(&linearized.logits[i])?.frobenius_norm();
        let base = linearized.logits[i].frobenius_norm();
        let rel = if diff == T::zero() {
            T::zero()
        } else if base == T::zero() {
            T::infinity()
        } else {
            diff / base
        };
        if rel > tol {
            return Ok(Some(a.eta_t));
        }
    }
    Ok(None)
}

/// Largest relative spread `(max - min) / |mean|` across curves, over the union
/// of their sample times up to `t_cut` that every curve covers.
pub fn collapse_metric<T: Scalar>(curves: &[Curve<T>], t_cut: T) -> Result<T> {
    if curves.len() < 2 {
        return invalid("collapse needs at least two curves");
    }
    let start = curves
        .iter()
        .map(|c| c.times.first().copied().unwrap_or_else(T::infinity))
        .fold(T::neg_infinity(), T::max);
    let end = curves
        .iter()
        .map(|c| c.times.last().copied().unwrap_or_else(T::neg_infinity))
        .fold(t_cut, T::min);
    let mut grid: Vec<T> = curves
        .iter()
        .flat_map(|c| c.times.iter().copied())
        .filter(|&t| t >= start && t <= end)
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    grid.dedup();
    if grid.is_empty() {
        return invalid("no common times below the cut");
    }
    let mut worst = T::zero();
    let mut values = Vec::with_capacity(curves.len());
    for &t in &grid {
        values.clear();
        values.extend(curves.iter().map(|c| c.at(t).expect("inside common range")));
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let (lo, hi) = (values[0], values[values.len() - 1]);
        let mean = values.iter().copied().sum::<T>() / T::of_usize(values.len());
        let spread = if hi == lo {
            T::zero()
        } else if mean == T::zero() {
            T::infinity()
        } else {
            (hi - lo) / mean.abs()
        };
        if !(spread <= worst) {
            worst = spread;
        }
    }
    Ok(worst)
}
