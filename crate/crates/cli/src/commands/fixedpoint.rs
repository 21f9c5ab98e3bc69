//! Equilibria of the regularized linearized flow.
//!
//! The small-logit closed form is compared against the flow run from `z = 0`
//! to a long horizon (at unit learning rate); the optional two-class
//! large-logit solve reports its self-consistency residual.

use anyhow::Result;
use serde::Serialize;

use super::{setup, RunOptions, SeedOverride};
use crate::config::{FixedPointConfig, KernelKind};
use crate::output::f;
use tempdyn_core::dynamics::{fixed_point_large_2class, fixed_point_small, regularized_linearized_flow};
use tempdyn_core::kernel::{analytic_ntk_fc, empirical_ntk, KernelTensor};
use tempdyn_core::linalg::Matrix;
use tempdyn_core::model::{init_params, Mlp, NetworkSpec};

pub const HEADER: [&str; 6] = ["example", "class", "closed_form", "simplified", "ode_limit", "abs_diff"];
pub const LARGE_HEADER: [&str; 4] = ["example", "label", "u", "z1"];

impl SeedOverride for FixedPointConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

#[derive(Serialize)]
struct SmallSummary {
    beta: f64,
    l2: f64,
    horizon: f64,
    validity: f64,
    rel_error: f64,
}

#[derive(Serialize)]
struct LargeSummary {
    beta: f64,
    l2: f64,
    residual: f64,
    iterations: usize,
    sign_consistent: bool,
    validity: f64,
}

#[derive(Serialize)]
struct Summary {
    small: SmallSummary,
    large: Option<LargeSummary>,
}

pub fn train_kernel(kind: KernelKind, spec: &NetworkSpec, seed: u64, x: &Matrix<f64>) -> Result<KernelTensor<f64>> {
    Ok(match kind {
        KernelKind::Empirical => {
            let p0 = init_params::<f64>(spec, seed);
            empirical_ntk(&Mlp::new(spec.clone())?, p0.as_slice(), x, x)?
        }
        KernelKind::Analytic => analytic_ntk_fc(spec, x, x)?,
    })
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<FixedPointConfig>(opts, "fixedpoint", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let train = &s.data.train;
    let theta = train_kernel(cfg.kernel, &cfg.model, cfg.seed, &train.x)?;
    let (m, k) = (train.len(), s.data.num_classes);

    let small = fixed_point_small(&theta, &train.y, cfg.beta, cfg.l2)?;
    let horizon = cfg.horizon.unwrap_or(40.0 / cfg.l2);
    let flow = regularized_linearized_flow(
        &theta,
        &Matrix::zeros(m, k),
        &train.y,
        cfg.beta,
        1.0,
        cfg.l2,
        &[0.0, horizon],
        None,
    )?;
    let z_ode = flow.logits.last().expect("two output times").scale(1.0 / cfg.beta);
    let diff = z_ode.sub(&small.z_star)?;

    let mut table = s.out.csv("fixedpoint.csv", &HEADER)?;
    for a in 0..m {
        for i in 0..k {
            table.row([
                a.to_string(),
                i.to_string(),
                f(small.z_star[(a, i)]),
                f(small.simplified[(a, i)]),
                f(z_ode[(a, i)]),
                f(diff[(a, i)].abs()),
            ])?;
        }
    }
    table.finish()?;

    let large = match &cfg.large {
        Some(regime) => {
            let sol = fixed_point_large_2class(&theta.class_average(), train.labels(), regime.beta, regime.l2)?;
            let mut table = s.out.csv("fixedpoint_large.csv", &LARGE_HEADER)?;
            for (a, (&u, &z1)) in sol.u.iter().zip(&sol.z1).enumerate() {
                table.row([a.to_string(), train.labels()[a].to_string(), f(u), f(z1)])?;
            }
            table.finish()?;
            Some(LargeSummary {
                beta: regime.beta,
                l2: regime.l2,
                residual: sol.residual,
                iterations: sol.iterations,
                sign_consistent: sol.sign_consistent,
                validity: sol.validity,
            })
        }
        None => None,
    };

    s.out.write_json(
        "fixedpoint.json",
        &Summary {
            small: SmallSummary {
                beta: cfg.beta,
                l2: cfg.l2,
                horizon,
                validity: small.validity,
                rel_error: diff.frobenius_norm() / small.z_star.frobenius_norm(),
            },
            large,
        },
    )
}
