//! Parameter-space training runs and function-space flows.
//!
//! Gradients are of the summed loss, so one SGD step of size `alpha` moves
//! the training logits by `alpha beta^2 Theta (Y - sigma(Z))` to first order:
//! one step corresponds to one unit of raw time `t` in the flows. Reported
//! losses are means over examples.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::kernel::{empirical_ntk, kernel_apply, KernelTensor};
use crate::linalg::{norm, Lu, Matrix};
use crate::loss::{accuracy, residual, softmax_into, xent_loss, LabelMatrix};
use crate::model::Model;
use crate::ode::{integrate, OdeOptions};
use crate::scalar::Scalar;

/// Logit norm above which a run counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Nonlinear,
    Linearized,
    RegularizedLinearized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    DiscreteSteps,
    Rk4Flow,
}

fn one() -> usize {
    1
}

/// Settings of a single training run. Exactly one of `alpha` and `eta_tilde` is given.
///
/// `momentum` is the `gamma` of the recursion `v <- (1 - gamma) v - g`,
/// `theta <- theta + alpha v`; absent means plain SGD, and `gamma = 1` is
/// also SGD. The horizon is `steps` raw time units, recorded every
/// `record_every` units and at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub integrator: Integrator,
    pub steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta must be positive");
        }
        match (self.alpha, self.eta_tilde) {
            (Some(a), None) if a >= 0.0 && a.is_finite() => {}
            (None, Some(e)) if e >= 0.0 && e.is_finite() => {}
            (Some(_), Some(_)) | (None, None) => {
                return invalid("give exactly one of alpha and eta_tilde")
            }
            _ => return invalid("learning rate must be nonnegative"),
        }
        if let Some(g) = self.momentum {
            if !(g > 0.0 && g <= 1.0) {
                return invalid(format!("momentum {g} outside (0, 1]"));
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return invalid("l2 must be nonnegative");
        }
        if self.steps == 0 {
            return invalid("steps must be positive");
        }
        if self.record_every == 0 {
            return invalid("record_every must be positive");
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| self.eta_tilde.unwrap_or(0.0) / (self.beta * self.beta))
    }

    pub fn eta_tilde(&self) -> f64 {
        self.eta_tilde
            .unwrap_or_else(|| self.alpha.unwrap_or(0.0) * self.beta * self.beta)
    }

    /// Recorded steps: multiples of `record_every`, plus the final step.
    pub fn record_steps(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=self.steps).step_by(self.record_every).collect();
        if *out.last().expect("step 0") != self.steps {
            out.push(self.steps);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record<T> {
    /// Step count for discrete runs, record index for continuous ones.
    pub step: usize,
    pub t: T,
    pub eta_t: T,
    pub loss: T,
    pub train_acc: T,
    pub test_acc: T,
    pub z_norm: T,
    pub diverged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Loss,
    TrainAcc,
    TestAcc,
    ZNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeAxis {
    Raw,
    EtaTilde,
    /// Raw time multiplied by a constant.
    Scaled(f64),
}

/// Time series of a scalar quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve<T> {
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> Curve<T> {
    /// Linear interpolation; `None` outside the recorded range.
    pub fn at(&self, time: T) -> Option<T> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if time < first || time > last {
            return None;
        }
        let idx = self.times.partition_point(|&s| s < time);
        if self.times[idx] == time {
            return Some(self.values[idx]);
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (time - t0) / (t1 - t0);
        Some(self.values[idx - 1] + w * (self.values[idx] - self.values[idx - 1]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub records: Vec<Record<T>>,
    /// Rescaled training logits `Z` at each record.
    pub logits: Vec<Matrix<T>>,
    /// Rescaled test logits at each record; empty without a test set.
    pub test_logits: Vec<Matrix<T>>,
    /// Step (or record index) at which the run was cut short.
    pub diverged_at: Option<usize>,
    pub final_params: Option<Vec<T>>,
}

pub const TRAJECTORY_HEADER: [&str; 8] = [
    "step", "t", "eta_t", "loss", "train_acc", "test_acc", "z_norm", "diverged",
];

impl<T: Scalar> Trajectory<T> {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            logits: Vec::new(),
            test_logits: Vec::new(),
            diverged_at: None,
            final_params: None,
        }
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> Option<&Record<T>> {
        self.records.last()
    }

    /// Records before any divergence.
    pub fn finite_records(&self) -> impl Iterator<Item = &Record<T>> {
        self.records.iter().filter(|r| !r.diverged)
    }

    pub fn curve(&self, field: Field, axis: TimeAxis) -> Curve<T> {
        let (times, values) = self
            .finite_records()
            .map(|r| {
                let t = match axis {
                    TimeAxis::Raw => r.t,
                    TimeAxis::EtaTilde => r.eta_t,
                    TimeAxis::Scaled(s) => r.t * T::of(s),
                };
                let v = match field {
                    Field::Loss => r.loss,
                    Field::TrainAcc => r.train_acc,
                    Field::TestAcc => r.test_acc,
                    Field::ZNorm => r.z_norm,
                };
                (t, v)
            })
            .unzip();
        Curve { times, values }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAJECTORY_HEADER)?;
        for r in &self.records {
            w.write_record(&[
                r.step.to_string(),
                r.t.to_text(),
                r.eta_t.to_text(),
                r.loss.to_text(),
                r.train_acc.to_text(),
                r.test_acc.to_text(),
                r.z_norm.to_text(),
                r.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn push(
        &mut self,
        step: usize,
        t: T,
        eta_tilde: T,
        z: Matrix<T>,
        y: &LabelMatrix<T>,
        test: Option<(Matrix<T>, &[usize])>,
    ) -> bool {
        let z_norm = z.frobenius_norm();
        let diverged = !z.all_finite() || !(z_norm <= T::of(DIVERGENCE_THRESHOLD));
        let loss = xent_loss(&z, y).unwrap_or_else(|_| T::nan());
        let train_acc = accuracy(&z, y.labels());
        let (test_acc, test_z) = match test {
            Some((zt, labels)) => (accuracy(&zt, labels), Some(zt)),
            None => (T::nan(), None),
        };
        self.records.push(Record {
            step,
            t,
            eta_t: eta_tilde * t,
            loss,
            train_acc,
            test_acc,
            z_norm,
            diverged: diverged || !loss.is_finite(),
        });
        self.logits.push(z);
        if let Some(zt) = test_z {
            self.test_logits.push(zt);
        }
        let diverged = diverged || !loss.is_finite();
        if diverged {
            self.diverged_at = Some(step);
        }
        diverged
    }
}

fn logits_diverged<T: Scalar>(z: &Matrix<T>) -> bool {
    !z.all_finite() || !(z.frobenius_norm() <= T::of(DIVERGENCE_THRESHOLD))
}

fn check_data<T: Scalar, M: Model<T> + ?Sized>(model: &M, params: &[T], data: &Dataset<T>) -> Result<()> {
    if params.len() != model.num_params() {
        return shape_err(format!(
            "{} parameters for a model with {}",
            params.len(),
            model.num_params()
        ));
    }
    if data.input_dim() != model.input_dim() || data.num_classes != model.num_classes() {
        return shape_err("dataset does not match the model's input or class count");
    }
    Ok(())
}

fn test_part<'a, T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    data: &'a Dataset<T>,
    beta: T,
) -> Result<Option<(Matrix<T>, &'a [usize])>> {
    if data.test.is_empty() {
        return Ok(None);
    }
    Ok(Some((
        model.forward(params, &data.test.x)?.scale(beta),
        data.test.labels(),
    )))
}

/// Runs `config` from `params0`: nonlinear modes train the model itself,
/// linearized modes integrate the function-space flow with the empirical
/// kernel at `params0`.
pub fn train<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params0: &[T],
    data: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Trajectory<T>> {
    config.validate()?;
    match config.mode {
        Mode::Nonlinear if config.momentum.is_some() => momentum_train(model, params0, data, config),
        Mode::Nonlinear => sgd_train(model, params0, data, config),
        Mode::Linearized | Mode::RegularizedLinearized => {
            check_data(model, params0, data)?;
            let beta = T::of(config.beta);
            let theta = empirical_ntk(model, params0, &data.train.x, &data.train.x)?;
            let z0 = model.forward(params0, &data.train.x)?.scale(beta);
            let cross;
            let z0_test;
            let test = if data.test.is_empty() {
                None
            } else {
                cross = empirical_ntk(model, params0, &data.test.x, &data.train.x)?;
                z0_test = model.forward(params0, &data.test.x)?.scale(beta);
                Some(FlowTest {
                    cross: &cross,
                    z0: &z0_test,
                    labels: data.test.labels(),
                })
            };
            let times: Vec<T> = config.record_steps().iter().map(|&s| T::of_usize(s)).collect();
            if config.mode == Mode::Linearized {
                linearized_flow(&theta, &z0, &data.train.y, T::of(config.eta_tilde()), &times, test)
            } else {
                regularized_linearized_flow(
                    &theta,
                    &z0,
                    &data.train.y,
                    beta,
                    T::of(config.alpha()),
                    T::of(config.l2),
                    &times,
                    test,
                )
            }
        }
    }
}

/// Full-batch gradient descent on the cross-entropy of `beta z`.
///
/// With the discrete integrator this is `theta <- theta + alpha beta J^T (Y - sigma(Z))`;
/// with `Rk4Flow` the same vector field is integrated in continuous time.
pub fn sgd_train<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params0: &[T],
    data: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Trajectory<T>> {
    config.validate()?;
    check_data(model, params0, data)?;
    if config.mode != Mode::Nonlinear {
        return invalid("sgd_train runs the nonlinear model only");
    }
    let beta = T::of(config.beta);
    let alpha = T::of(config.alpha());
    let eta = T::of(config.eta_tilde());
    let x = &data.train.x;
    let y = &data.train.y;
    let record_steps = config.record_steps();

    if config.integrator == Integrator::Rk4Flow {
        return parameter_flow(model, params0, data, config);
    }

    let mut traj = Trajectory::new();
    let mut theta = params0.to_vec();
    let mut next = 0;
    for step in 0..=config.steps {
        let z = model.forward(&theta, x)?.scale(beta);
        let diverged = logits_diverged(&z);
        if diverged || record_steps[next] == step {
            let test = test_part(model, &theta, data, beta)?;
            if traj.push(step, T::of_usize(step), eta, z.clone(), y, test) {
                break;
            }
            next += 1;
        }
        if step == config.steps {
            break;
        }
        let r = residual(&z, y)?;
        let g = model.vjp(&theta, x, &r)?;
        let s = alpha * beta;
        for (p, gi) in theta.iter_mut().zip(&g) {
            *p += s * *gi;
        }
    }
    traj.final_params = Some(theta);
    Ok(traj)
}

fn parameter_flow<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params0: &[T],
    data: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Trajectory<T>> {
    let beta = T::of(config.beta);
    let coef = T::of(config.alpha()) * beta;
    let eta = T::of(config.eta_tilde());
    let x = &data.train.x;
    let y = &data.train.y;
    let steps = config.record_steps();
    let times: Vec<T> = steps.iter().map(|&s| T::of_usize(s)).collect();

    let mut traj = Trajectory::new();
    let z0 = model.forward(params0, x)?.scale(beta);
    let test = test_part(model, params0, data, beta)?;
    if traj.push(0, T::zero(), eta, z0, y, test) || times.len() == 1 {
        traj.final_params = Some(params0.to_vec());
        return Ok(traj);
    }
    let rhs = |_t: T, theta: &[T], out: &mut [T]| -> Result<()> {
        let z = model.forward(theta, x)?.scale(beta);
        let r = residual(&z, y)?;
        let g = model.vjp(theta, x, &r)?;
        for (o, gi) in out.iter_mut().zip(g) {
            *o = coef * gi;
        }
        Ok(())
    };
    let stop = |_t: T, theta: &[T]| match model.forward(theta, x) {
        Ok(z) => logits_diverged(&z.scale(beta)),
        Err(_) => true,
    };
    let sol = match integrate(rhs, params0, &times, &OdeOptions::default(), stop) {
        Ok(sol) => sol,
        Err(Error::StepUnderflow { t, .. }) => {
            // Blow-up of the flow: report it like any other divergence.
            let mut traj = traj;
            let nan = Matrix::from_fn(x.rows(), data.num_classes, |_, _| T::nan());
            traj.push(steps.len(), T::of(t), eta, nan, y, None);
            return Ok(traj);
        }
        Err(e) => return Err(e),
    };
    for (i, (t, theta)) in sol.times.iter().zip(&sol.states).enumerate().skip(1) {
        let z = model.forward(theta, x)?.scale(beta);
        let test = test_part(model, theta, data, beta)?;
        if traj.push(steps[i], *t, eta, z, y, test) {
            traj.final_params = Some(theta.clone());
            return Ok(traj);
        }
    }
    if let Some((t, theta)) = sol.stopped {
        let z = model.forward(&theta, x)?.scale(beta);
        let step = (t.to_f64_lossy().floor() as usize).max(1);
        traj.push(step, t, eta, z, y, None);
        traj.diverged_at = Some(step);
        traj.records.last_mut().expect("pushed").diverged = true;
        traj.final_params = Some(theta);
    } else {
        traj.final_params = sol.states.last().cloned();
    }
    Ok(traj)
}

/// Heavy-ball recursion `v <- (1 - gamma) v - g`, `theta <- theta + alpha v`,
/// with `g` the gradient of the summed loss and `v_0 = 0`.
pub fn momentum_train<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params0: &[T],
    data: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Trajectory<T>> {
    config.validate()?;
    check_data(model, params0, data)?;
    let Some(gamma) = config.momentum else {
        return invalid("momentum_train needs a momentum coefficient");
    };
    if config.integrator != Integrator::DiscreteSteps {
        return invalid("momentum runs use discrete steps");
    }
    if config.mode != Mode::Nonlinear {
        return invalid("momentum_train runs the nonlinear model only");
    }
    let beta = T::of(config.beta);
    let alpha = T::of(config.alpha());
    let eta = T::of(config.eta_tilde());
    let decay = T::one() - T::of(gamma);
    let x = &data.train.x;
    let y = &data.train.y;
    let record_steps = config.record_steps();

    let mut traj = Trajectory::new();
    let mut theta = params0.to_vec();
    let mut v = vec![T::zero(); theta.len()];
    let mut next = 0;
    for step in 0..=config.steps {
        let z = model.forward(&theta, x)?.scale(beta);
        let diverged = logits_diverged(&z);
        if diverged || record_steps[next] == step {
            let test = test_part(model, &theta, data, beta)?;
            if traj.push(step, T::of_usize(step), eta, z.clone(), y, test) {
                break;
            }
            next += 1;
        }
        if step == config.steps {
            break;
        }
        let r = residual(&z, y)?;
        // The loss gradient is -beta J^T r.
        let g = model.vjp(&theta, x, &r)?;
        for ((p, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(&g) {
            *vi = decay * *vi + beta * *gi;
            *p += alpha * *vi;
        }
    }
    traj.final_params = Some(theta);
    Ok(traj)
}

/// Test inputs carried along a function-space flow.
#[derive(Clone, Copy, Debug)]
pub struct FlowTest<'a, T> {
    /// `Theta(x_test, X_train)`.
    pub cross: &'a KernelTensor<T>,
    /// Rescaled test logits at `t = 0`.
    pub z0: &'a Matrix<T>,
    pub labels: &'a [usize],
}

/// `q' = c Theta (Y - sigma(s q)) - lambda (q - q0)`, recorded as `Z = s q`.
#[allow(clippy::too_many_arguments)]
fn function_flow<T: Scalar>(
    theta: &KernelTensor<T>,
    z0: &Matrix<T>,
    y: &LabelMatrix<T>,
    c: T,
    s: T,
    lambda: T,
    times: &[T],
    test: Option<FlowTest<'_, T>>,
) -> Result<Trajectory<T>> {
    let m = y.num_examples();
    let k = y.num_classes();
    if !theta.is_square() || theta.m1() != m || theta.k() != k || z0.shape() != (m, k) {
        return shape_err("kernel, initial logits and labels disagree in shape");
    }
    if let Some(t) = &test {
        let mt = t.z0.rows();
        if t.cross.m1() != mt || t.cross.m2() != m || t.cross.k() != k || t.z0.cols() != k || t.labels.len() != mt {
            return shape_err("test kernel, logits and labels disagree in shape");
        }
    }
    if times.is_empty() || times[0] != T::zero() {
        return invalid("flow output times must start at zero");
    }
    let n_train = m * k;
    let mut q0: Vec<T> = z0.as_slice().iter().map(|&v| v / s).collect();
    if let Some(t) = &test {
        q0.extend(t.z0.as_slice().iter().map(|&v| v / s));
    }
    let reference = q0.clone();

    let rhs = |_t: T, q: &[T], out: &mut [T]| -> Result<()> {
        let mut r = vec![T::zero(); n_train];
        let mut scaled = vec![T::zero(); k];
        for a in 0..m {
            for i in 0..k {
                scaled[i] = s * q[a * k + i];
            }
            softmax_into(&scaled, &mut r[a * k..(a + 1) * k])?;
            for i in 0..k {
                r[a * k + i] = y.matrix()[(a, i)] - r[a * k + i];
            }
        }
        let r = Matrix::new(m, k, r)?;
        let drive = kernel_apply(theta, &r)?;
        for (idx, &d) in drive.as_slice().iter().enumerate() {
            out[idx] = c * d - lambda * (q[idx] - reference[idx]);
        }
        if let Some(t) = &test {
            let drive = kernel_apply(t.cross, &r)?;
            for (j, &d) in drive.as_slice().iter().enumerate() {
                let idx = n_train + j;
                out[idx] = c * d - lambda * (q[idx] - reference[idx]);
            }
        }
        Ok(())
    };
    let stiffness = c * s * theta.max_eigenvalue()? + lambda;
    let opts = OdeOptions {
        initial_step: if stiffness > T::zero() {
            Some(T::of(0.1) / stiffness)
        } else {
            None
        },
        ..OdeOptions::default()
    };
    let stop = |_t: T, q: &[T]| {
        let zn = norm(&q[..n_train]) * s;
        !(zn <= T::of(DIVERGENCE_THRESHOLD))
    };
    let sol = integrate(rhs, &q0, times, &opts, stop)?;

    let eta = c * s;
    let mut traj = Trajectory::new();
    let unpack = |q: &[T]| -> Result<(Matrix<T>, Option<Matrix<T>>)> {
        let z = Matrix::new(m, k, q[..n_train].iter().map(|&v| v * s).collect())?;
        let zt = match &test {
            Some(t) => Some(Matrix::new(
                t.z0.rows(),
                k,
                q[n_train..].iter().map(|&v| v * s).collect(),
            )?),
            None => None,
        };
        Ok((z, zt))
    };
    for (idx, (t, q)) in sol.times.iter().zip(&sol.states).enumerate() {
        let (z, zt) = unpack(q)?;
        let test_arg = zt.map(|zt| (zt, test.as_ref().expect("test set").labels));
        if traj.push(idx, *t, eta, z, y, test_arg) {
            return Ok(traj);
        }
    }
    if let Some((t, q)) = sol.stopped {
        let (z, _) = unpack(&q)?;
        let idx = traj.records.len();
        traj.push(idx, t, eta, z, y, None);
        traj.diverged_at = Some(idx);
        traj.records.last_mut().expect("pushed").diverged = true;
    }
    Ok(traj)
}

/// `dZ/dt = eta_tilde Theta (Y - sigma(Z))` sampled at `times` (raw time, starting at 0).
pub fn linearized_flow<T: Scalar>(
    theta: &KernelTensor<T>,
    z0: &Matrix<T>,
    y: &LabelMatrix<T>,
    eta_tilde: T,
    times: &[T],
    test: Option<FlowTest<'_, T>>,
) -> Result<Trajectory<T>> {
    if !(eta_tilde >= T::zero()) {
        return invalid("eta_tilde must be nonnegative");
    }
    function_flow(theta, z0, y, eta_tilde, T::one(), T::zero(), times, test)
}

/// `z' = beta alpha Theta (Y - sigma(beta z)) - l2 (z - z0)` with `z = Z / beta`.
/// `z0` and the recorded logits are rescaled (`Z = beta z`).
#[allow(clippy::too_many_arguments)]
pub fn regularized_linearized_flow<T: Scalar>(
    theta: &KernelTensor<T>,
    z0: &Matrix<T>,
    y: &LabelMatrix<T>,
    beta: T,
    alpha: T,
    l2: T,
    times: &[T],
    test: Option<FlowTest<'_, T>>,
) -> Result<Trajectory<T>> {
    if !(beta > T::zero()) || !(alpha >= T::zero()) || !(l2 >= T::zero()) {
        return invalid("need beta > 0, alpha >= 0 and l2 >= 0");
    }
    function_flow(theta, z0, y, beta * alpha, beta, l2, times, test)
}

/// Right-hand side of the regularized flow in unscaled logits.
pub fn regularized_rhs<T: Scalar>(
    theta: &KernelTensor<T>,
    z: &Matrix<T>,
    z0: &Matrix<T>,
    y: &LabelMatrix<T>,
    beta: T,
    alpha: T,
    l2: T,
) -> Result<Matrix<T>> {
    let r = residual(&z.scale(beta), y)?;
    let drive = kernel_apply(theta, &r)?;
    let dz = z.sub(z0)?;
    drive.zip_with(&dz, |d, e| beta * alpha * d - l2 * e)
}

/// Closed-form equilibrium of the regularized flow for small `beta z`, with `z(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallFixedPoint<T> {
    /// `(beta / l2) [I + (beta^2 / (K l2)) Theta P]^{-1} Theta (Y - 1/K)`, where
    /// `P` removes the per-example logit mean.
    pub z_star: Matrix<T>,
    /// Leading-order form `(beta / l2) Theta (Y - 1/K)`.
    pub simplified: Matrix<T>,
    /// `|(beta / l2) Theta|_F`; the expansion needs this to be small.
    pub validity: T,
}

pub fn fixed_point_small<T: Scalar>(
    theta: &KernelTensor<T>,
    y: &LabelMatrix<T>,
    beta: T,
    l2: T,
) -> Result<SmallFixedPoint<T>> {
    let m = y.num_examples();
    let k = y.num_classes();
    if !theta.is_square() || theta.m1() != m || theta.k() != k {
        return shape_err("kernel and labels disagree in shape");
    }
    if !(beta > T::zero()) || !(l2 > T::zero()) {
        return invalid("fixed point needs beta > 0 and l2 > 0");
    }
    let kk = T::of_usize(k);
    let centred = y.matrix().map(|v| v - T::one() / kk);
    let drive = kernel_apply(theta, &centred)?;
    let simplified = drive.scale(beta / l2);

    let dense = theta.to_dense();
    let n = m * k;
    let coef = beta * beta / (kk * l2);
    // (Theta P)_{rc} = Theta_{rc} - mean over the class block of column c.
    let mut a = Matrix::identity(n);
    for r in 0..n {
        for blk in 0..m {
            let mean = (0..k).map(|j| dense[(r, blk * k + j)]).sum::<T>() / kk;
            for j in 0..k {
                let c = blk * k + j;
                a[(r, c)] += coef * (dense[(r, c)] - mean);
            }
        }
    }
    let z = Lu::new(&a)
        .map_err(|_| Error::Singular("small-logit fixed-point bracket".into()))?
        .solve_vec(simplified.as_slice())?;
    Ok(SmallFixedPoint {
        z_star: Matrix::new(m, k, z)?,
        simplified,
        validity: theta.frobenius_norm() * beta / l2,
    })
}

/// Large-logit two-class equilibrium under the zero-training-error ansatz.
#[derive(Clone, Debug, PartialEq)]
pub struct LargeFixedPoint<T> {
    /// `u = beta z_1` per training point.
    pub u: Vec<T>,
    /// First-class logit `z_1 = u / beta`.
    pub z1: Vec<T>,
    /// Max-norm residual of `u - (beta^2 / l2) Theta (y e^{-2 y u})`.
    pub residual: T,
    pub iterations: usize,
    /// Whether every `z_1` has the sign of its label (`+` for class 0).
    pub sign_consistent: bool,
    /// `ln(beta |Theta|_F / l2)`; the ansatz needs this to be large.
    pub validity: T,
}

/// Solves `z_1 = (beta / l2) Theta sign(z_1) e^{-2 beta |z_1|}` with `sign(z_1)`
/// fixed by the labels. In `w = y u` the equation is `w = A e^{-2w}` with
/// `A = (beta^2 / l2) D Theta D`, the stationarity condition of a strictly
/// convex function when `Theta` is positive definite, so Newton's method with
/// a backtracking line search finds the unique root.
pub fn fixed_point_large_2class<T: Scalar>(
    theta_x: &Matrix<T>,
    labels: &[usize],
    beta: T,
    l2: T,
) -> Result<LargeFixedPoint<T>> {
    let m = labels.len();
    if theta_x.shape() != (m, m) {
        return shape_err("kernel block must be M x M");
    }
    if labels.iter().any(|&l| l > 1) {
        return invalid("two-class solver needs labels 0 and 1");
    }
    if !(beta > T::zero()) || !(l2 > T::zero()) {
        return invalid("fixed point needs beta > 0 and l2 > 0");
    }
    let sign: Vec<T> = labels
        .iter()
        .map(|&l| if l == 0 { T::one() } else { -T::one() })
        .collect();
    let c = beta * beta / l2;
    let a = Matrix::from_fn(m, m, |i, j| c * sign[i] * theta_x[(i, j)] * sign[j]);
    let two = T::of(2.0);
    let resid = |w: &[T]| -> Vec<T> {
        let e: Vec<T> = w.iter().map(|&v| (-two * v).exp()).collect();
        let ae = a.matvec(&e).expect("square");
        w.iter().zip(ae).map(|(&wi, v)| wi - v).collect()
    };
    let max_abs = |v: &[T]| v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));

    let mut w: Vec<T> = (0..m)
        .map(|i| (T::one() + two * a[(i, i)].max(T::zero())).ln() / two)
        .collect();
    let mut f = resid(&w);
    let tol = T::of(1e-13);
    let max_iter = 200;
    let mut iterations = 0;
    while iterations < max_iter {
        let fnorm = max_abs(&f);
        if fnorm <= tol * max_abs(&w).max(T::one()) {
            break;
        }
        iterations += 1;
        let e: Vec<T> = w.iter().map(|&v| (-two * v).exp()).collect();
        let jac = Matrix::from_fn(m, m, |i, j| {
            let d = if i == j { T::one() } else { T::zero() };
            d + two * a[(i, j)] * e[j]
        });
        let neg_f: Vec<T> = f.iter().map(|&v| -v).collect();
        let delta = Lu::new(&jac)?.solve_vec(&neg_f)?;
        let f2 = crate::linalg::dot(&f, &f);
        let mut step = T::one();
        loop {
            let trial: Vec<T> = w.iter().zip(&delta).map(|(&wi, &d)| wi + step * d).collect();
            let ft = resid(&trial);
            let ft2 = crate::linalg::dot(&ft, &ft);
            if ft2.is_finite() && ft2 <= (T::one() - T::of(1e-4) * step) * f2 {
                w = trial;
                f = ft;
                break;
            }
            step *= T::of(0.5);
            if step < T::of(1e-12) {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: fnorm.to_f64_lossy(),
                });
            }
        }
    }
    let residual = max_abs(&f);
    if !(residual <= tol * max_abs(&w).max(T::one())) {
        return Err(Error::NoConvergence {
            iterations,
            residual: residual.to_f64_lossy(),
        });
    }
    let u: Vec<T> = w.iter().zip(&sign).map(|(&wi, &s)| wi * s).collect();
    let theta_norm = theta_x.frobenius_norm();
    Ok(LargeFixedPoint {
        z1: u.iter().map(|&v| v / beta).collect(),
        sign_consistent: w.iter().all(|&v| v > T::zero()),
        u,
        residual,
        iterations,
        validity: (beta * theta_norm / l2).ln(),
    })
}
