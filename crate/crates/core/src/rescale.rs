//! Continuous-time rescalings of SGD and heavy-ball momentum.
//!
//! The momentum recursion `v <- (1 - gamma) v - g`, `theta <- theta + alpha v`
//! becomes, with `t = a tau` and `v = b nu`, the canonical system
//! `d nu / d tau = -lambda nu - g`, `d theta / d tau = nu` for `a = b = sqrt(alpha)`
//! and `lambda = gamma / sqrt(alpha)`. Trajectories are then indexed by
//! `T_mom = alpha / gamma^2` alone.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Ratio above which momentum counts as fast (SGD-like).
pub const FAST_MOMENTUM_RATIO: f64 = 10.0;

pub const SCHEME_HEADER: [&str; 5] = ["scheme", "beta", "alpha", "gamma", "tau_scale"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumCanonical<T> {
    pub a: T,
    pub b: T,
    pub lambda: T,
    pub t_mom: T,
}

pub fn canonical_momentum<T: Scalar>(alpha: T, gamma: T) -> Result<MomentumCanonical<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return invalid("alpha must be positive");
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return invalid(format!("gamma {gamma} outside (0, 1)"));
    }
    let root = alpha.sqrt();
    Ok(MomentumCanonical {
        a: root,
        b: root,
        lambda: gamma / root,
        t_mom: alpha / (gamma * gamma),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Base rate is `eta_tilde`; `alpha = eta_tilde / beta^2`.
    EffectiveLr,
    /// Base rate is `alpha_hat`; `alpha = alpha_hat / beta`.
    StepInvariant,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::EffectiveLr => "effective_lr",
            Scheme::StepInvariant => "step_invariant",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams<T> {
    pub scheme: Scheme,
    pub base_rate: T,
    pub gamma_tilde: T,
    pub beta: T,
    pub alpha: T,
    pub gamma: T,
    /// `tau = tau_scale * t`.
    pub tau_scale: T,
}

impl<T: Scalar> SchemeParams<T> {
    pub fn csv_row(&self) -> [String; 5] {
        [
            self.scheme.name().to_string(),
            self.beta.to_text(),
            self.alpha.to_text(),
            self.gamma.to_text(),
            self.tau_scale.to_text(),
        ]
    }
}

/// Both schemes set `gamma = beta sqrt(alpha) gamma_tilde` and `tau = beta sqrt(alpha) t`.
pub fn scheme_params<T: Scalar>(scheme: Scheme, base_rate: T, gamma_tilde: T, beta: T) -> Result<SchemeParams<T>> {
    if !(base_rate > T::zero()) || !(gamma_tilde >= T::zero()) || !(beta > T::zero()) {
        return invalid("need a positive rate and beta and a nonnegative gamma_tilde");
    }
    let (alpha, canonical_rate) = match scheme {
        Scheme::EffectiveLr => (base_rate / (beta * beta), base_rate),
        Scheme::StepInvariant => (base_rate / beta, base_rate * beta),
    };
    let tau_scale = canonical_rate.sqrt();
    let gamma = tau_scale * gamma_tilde;
    if !(gamma < T::one()) {
        return invalid(format!(
            "gamma = {gamma} >= 1; the {} scheme needs its rate {canonical_rate} < gamma_tilde^-2 = {}",
            scheme.name(),
            T::one() / (gamma_tilde * gamma_tilde)
        ));
    }
    Ok(SchemeParams {
        scheme,
        base_rate,
        gamma_tilde,
        beta,
        alpha,
        gamma,
        tau_scale,
    })
}

/// `theta(tau) - theta(0) = -g tau^2 / 2 + gamma_tilde g tau^3 / 6` for `nu(0) = 0`.
pub fn early_momentum_expansion<T: Scalar>(g: &[T], gamma_tilde: T, tau: T) -> Vec<T> {
    let coef = -tau * tau / T::of(2.0) + gamma_tilde * tau * tau * tau / T::of(6.0);
    g.iter().map(|&gi| coef * gi).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd,
    /// Raw momentum coefficient `gamma` of the discrete recursion.
    Momentum { gamma: T },
}

/// Order-of-magnitude size of one step in parameters and in loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMagnitudes<T> {
    pub delta_theta: T,
    pub delta_loss: T,
}

/// With `ell_z` the scale of `dL/dZ` and `g_z` that of `dz/dtheta`, the loss
/// gradient is about `beta ell_z g_z`. SGD moves `alpha` times that; saturated
/// momentum moves `alpha / gamma` times that, i.e. `(sqrt(alpha) / gamma_tilde)`
/// with `gamma_tilde = gamma / sqrt(alpha)`. The loss changes by the gradient
/// times the step.
pub fn step_magnitudes<T: Scalar>(
    optimizer: Optimizer<T>,
    alpha: T,
    beta: T,
    ell_z: T,
    g_z: T,
) -> Result<StepMagnitudes<T>> {
    if !(alpha > T::zero()) || !(beta > T::zero()) || !(ell_z > T::zero()) || !(g_z > T::zero()) {
        return invalid("step magnitudes need positive scales");
    }
    let grad = beta * ell_z * g_z;
    let delta_theta = match optimizer {
        Optimizer::Sgd => alpha * grad,
        Optimizer::Momentum { gamma } => {
            if !(gamma > T::zero()) {
                return invalid("momentum coefficient must be positive");
            }
            alpha * grad / gamma
        }
    };
    Ok(StepMagnitudes {
        delta_theta,
        delta_loss: grad * delta_theta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumRegime {
    /// Velocity tracks `-g / lambda`; the run behaves like SGD at rate `alpha / gamma`.
    Fast,
    /// Velocity integrates the gradient history.
    Slow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeReport<T> {
    /// `c lambda |theta| / |g|` in canonical time.
    pub tau_c: T,
    /// `(gamma^2 / alpha) / (|g| / |theta|)`.
    pub ratio: T,
    pub regime: MomentumRegime,
}

pub fn momentum_regime<T: Scalar>(alpha: T, gamma: T, grad_norm: T, param_norm: T, c: T) -> Result<RegimeReport<T>> {
    if !(alpha > T::zero()) || !(gamma > T::zero()) || !(grad_norm > T::zero()) || !(param_norm > T::zero()) {
        return invalid("regime analysis needs positive rates and norms");
    }
    let lambda = gamma / alpha.sqrt();
    let ratio = (gamma * gamma / alpha) / (grad_norm / param_norm);
    Ok(RegimeReport {
        tau_c: c * lambda * param_norm / grad_norm,
        ratio,
        regime: if ratio >= T::of(FAST_MOMENTUM_RATIO) {
            MomentumRegime::Fast
        } else {
            MomentumRegime::Slow
        },
    })
}
