//! Adaptive fourth-order Runge-Kutta with step doubling.
//!
//! Each attempt takes one step of size `h` and two of size `h/2`; their
//! difference estimates the local error, and the accepted state is the
//! Richardson-extrapolated combination.

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// First trial step; defaults to a hundredth of the first output interval.
    pub initial_step: Option<T>,
    pub max_steps: usize,
}

impl<T: Scalar> Default for OdeOptions<T> {
    fn default() -> Self {
        Self {
            rtol: T::of(1e-8),
            atol: T::of(1e-12),
            initial_step: None,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution<T> {
    /// Output times reached, a prefix of the requested grid.
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    /// Time and state at which the stop predicate fired, if it did.
    pub stopped: Option<(T, Vec<T>)>,
    pub accepted: usize,
    pub rejected: usize,
}

struct Stepper<T, F> {
    rhs: F,
    k: [Vec<T>; 4],
    tmp: Vec<T>,
}

impl<T: Scalar, F: FnMut(T, &[T], &mut [T]) -> Result<()>> Stepper<T, F> {
    /// Classical RK4 step; `k1` must already hold `f(t, y)` when `have_k1`.
    fn step(&mut self, t: T, y: &[T], h: T, have_k1: bool, out: &mut [T]) -> Result<()> {
        let half = T::of(0.5);
        let n = y.len();
        if !have_k1 {
            (self.rhs)(t, y, &mut self.k[0])?;
        }
        for i in 0..n {
            self.tmp[i] = y[i] + half * h * self.k[0][i];
        }
        (self.rhs)(t + half * h, &self.tmp, &mut self.k[1])?;
        for i in 0..n {
            self.tmp[i] = y[i] + half * h * self.k[1][i];
        }
        (self.rhs)(t + half * h, &self.tmp, &mut self.k[2])?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k[2][i];
        }
        (self.rhs)(t + h, &self.tmp, &mut self.k[3])?;
        let sixth = h / T::of(6.0);
        let two = T::of(2.0);
        for i in 0..n {
            out[i] = y[i]
                + sixth * (self.k[0][i] + two * self.k[1][i] + two * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }
}

/// Integrates `y' = rhs(t, y)` from `times[0]`, recording the state at every
/// entry of `times`. After each accepted step `stop(t, y)` may end the run early.
pub fn integrate<T, F, S>(
    rhs: F,
    y0: &[T],
    times: &[T],
    opts: &OdeOptions<T>,
    mut stop: S,
) -> Result<OdeSolution<T>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]) -> Result<()>,
    S: FnMut(T, &[T]) -> bool,
{
    if times.is_empty() {
        return invalid("no output times");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("output times must be strictly increasing");
    }
    if !(opts.rtol > T::zero()) || opts.atol < T::zero() {
        return invalid("tolerances must be positive");
    }
    let n = y0.len();
    let mut stepper = Stepper {
        rhs,
        k: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        tmp: vec![T::zero(); n],
    };
    let mut sol = OdeSolution {
        times: vec![times[0]],
        states: vec![y0.to_vec()],
        stopped: None,
        accepted: 0,
        rejected: 0,
    };
    if times.len() == 1 {
        return Ok(sol);
    }

    let mut t = times[0];
    let mut y = y0.to_vec();
    let mut h = opts
        .initial_step
        .unwrap_or_else(|| (times[1] - times[0]) * T::of(0.01));
    if !(h > T::zero()) || !h.is_finite() {
        return invalid("initial step must be positive and finite");
    }
    let mut full = vec![T::zero(); n];
    let mut mid = vec![T::zero(); n];
    let mut fine = vec![T::zero(); n];
    let mut k1 = vec![T::zero(); n];
    let fifteenth = T::one() / T::of(15.0);
    let half = T::of(0.5);
    let mut target = 1;

    while target < times.len() {
        if sol.accepted + sol.rejected >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let remaining = times[target] - t;
        let clipped = h >= remaining;
        let step = if clipped { remaining } else { h };
        let floor = T::epsilon() * T::of(16.0) * t.abs().max(T::one());
        if step <= floor && !clipped {
            return Err(Error::StepUnderflow {
                t: t.to_f64_lossy(),
                h: step.to_f64_lossy(),
            });
        }

        // k1 at (t, y) is shared between the full step and the first half step.
        (stepper.rhs)(t, &y, &mut k1)?;
        stepper.k[0].copy_from_slice(&k1);
        stepper.step(t, &y, step, true, &mut full)?;
        stepper.k[0].copy_from_slice(&k1);
        stepper.step(t, &y, step * half, true, &mut mid)?;
        stepper.step(t + step * half, &mid, step * half, false, &mut fine)?;

        let mut err = T::zero();
        for i in 0..n {
            let scale = opts.atol + opts.rtol * y[i].abs().max(fine[i].abs());
            let e = (fine[i] - full[i]).abs() * fifteenth / scale;
            if !(e <= err) {
                err = if e.is_nan() { T::infinity() } else { e };
            }
        }

        if err <= T::one() {
            for i in 0..n {
                y[i] = fine[i] + (fine[i] - full[i]) * fifteenth;
            }
            t = if clipped { times[target] } else { t + step };
            sol.accepted += 1;
            let grow = if err == T::zero() {
                T::of(4.0)
            } else {
                (T::of(0.9) * err.powf(T::of(-0.2))).min(T::of(4.0)).max(T::of(0.1))
            };
            let proposal = step * grow;
            h = if clipped { proposal.max(h) } else { proposal };
            if clipped {
                sol.times.push(t);
                sol.states.push(y.clone());
                target += 1;
            }
            if stop(t, &y) {
                if !clipped {
                    sol.stopped = Some((t, y));
                } else {
                    sol.stopped = Some((t, sol.states.last().expect("recorded").clone()));
                }
                return Ok(sol);
            }
        } else {
            sol.rejected += 1;
            let shrink = if err.is_finite() {
                (T::of(0.9) * err.powf(T::of(-0.25))).max(T::of(0.1))
            } else {
                T::of(0.1)
            };
            h = step * shrink;
            if h <= floor {
                return Err(Error::StepUnderflow {
                    t: t.to_f64_lossy(),
                    h: h.to_f64_lossy(),
                });
            }
        }
    }
    Ok(sol)
}
