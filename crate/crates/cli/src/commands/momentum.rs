//! Momentum runs at fixed canonical damping, compared on the `sqrt(alpha) t` axis
//! and against SGD at rate `alpha / gamma`.

use anyhow::Result;
use rayon::prelude::*;

use super::{setup, RunOptions, SeedOverride};
use crate::config::MomentumConfig;
use crate::output::{f, opt, tag};
use tempdyn_core::dynamics::{train, Field, Mode, TimeAxis, TrainConfig, Trajectory};
use tempdyn_core::linalg::norm;
use tempdyn_core::loss::residual;
use tempdyn_core::model::{init_params, Mlp, Model};
use tempdyn_core::rescale::{momentum_regime, scheme_params, MomentumRegime, Scheme, SCHEME_HEADER};
use tempdyn_core::timescales::collapse_metric;

pub const COLLAPSE_HEADER: [&str; 9] = [
    "alpha",
    "gamma",
    "t_mom",
    "regime_ratio",
    "regime",
    "sgd_alpha",
    "sgd_max_rel_diff",
    "collapse_loss",
    "tau_cut",
];

impl SeedOverride for MomentumConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

/// Largest `|a - b| / |b|` of the losses over records present in both runs.
pub fn max_rel_loss_diff(a: &Trajectory<f64>, b: &Trajectory<f64>) -> Option<f64> {
    let n = a.records.len().min(b.records.len());
    if n == 0 {
        return None;
    }
    Some(
        a.records[..n]
            .iter()
            .zip(&b.records[..n])
            .map(|(x, y)| (x.loss - y.loss).abs() / y.loss.abs())
            .fold(0.0, f64::max),
    )
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<MomentumConfig>(opts, "momentum", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let data = &s.data;
    let mlp = Mlp::new(cfg.model.clone())?;
    let p0 = init_params::<f64>(&cfg.model, cfg.seed);
    let p0 = p0.as_slice();

    let z0 = mlp.forward(p0, &data.train.x)?.scale(cfg.beta);
    let r0 = residual(&z0, &data.train.y)?;
    let grad_norm = cfg.beta * norm(&mlp.vjp(p0, &data.train.x, &r0)?);
    let param_norm = norm(p0);

    let runs: Vec<(Trajectory<f64>, Trajectory<f64>)> = cfg
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<_> {
            let gamma = cfg.gamma_tilde * alpha.sqrt();
            let base = TrainConfig {
                beta: cfg.beta,
                alpha: Some(alpha),
                eta_tilde: None,
                momentum: Some(gamma),
                l2: 0.0,
                mode: Mode::Nonlinear,
                integrator: Default::default(),
                steps: cfg.steps,
                record_every: cfg.record_every,
                seed: cfg.seed,
            };
            let mom = train(&mlp, p0, data, &base)?;
            let sgd = train(
                &mlp,
                p0,
                data,
                &TrainConfig {
                    alpha: Some(alpha / gamma),
                    momentum: None,
                    ..base
                },
            )?;
            Ok((mom, sgd))
        })
        .collect::<Result<_>>()?;

    let tau_cut = 1.0 / cfg.gamma_tilde;
    let collapse = if runs.len() >= 2 {
        let curves: Vec<_> = runs
            .iter()
            .zip(&cfg.alphas)
            .map(|((mom, _), &alpha)| mom.curve(Field::Loss, TimeAxis::Scaled(alpha.sqrt())))
            .collect();
        collapse_metric(&curves, tau_cut).ok()
    } else {
        None
    };

    let mut table = s.out.csv("collapse.csv", &COLLAPSE_HEADER)?;
    for ((mom, sgd), &alpha) in runs.iter().zip(&cfg.alphas) {
        let a = tag(alpha);
        mom.write_csv(s.out.file(&format!("traj_alpha_{a}_momentum.csv"))?)?;
        sgd.write_csv(s.out.file(&format!("traj_alpha_{a}_sgd.csv"))?)?;
        let gamma = cfg.gamma_tilde * alpha.sqrt();
        let (ratio, regime) = match momentum_regime(alpha, gamma, grad_norm, param_norm, 1.0) {
            Ok(rep) => (
                rep.ratio,
                match rep.regime {
                    MomentumRegime::Fast => "fast",
                    MomentumRegime::Slow => "slow",
                },
            ),
            Err(_) => (f64::NAN, "undetermined"),
        };
        table.row([
            f(alpha),
            f(gamma),
            f(alpha / (gamma * gamma)),
            f(ratio),
            regime.to_string(),
            f(alpha / gamma),
            opt(max_rel_loss_diff(mom, sgd)),
            opt(collapse),
            f(tau_cut),
        ])?;
    }
    table.finish()?;

    if let Some(sch) = &cfg.scheme {
        let mut table = s.out.csv("scheme.csv", &SCHEME_HEADER)?;
        for &beta in &sch.betas {
            for (scheme, base) in [(Scheme::EffectiveLr, sch.eta_tilde), (Scheme::StepInvariant, sch.alpha_hat)] {
                let p = scheme_params(scheme, base, sch.gamma_tilde, beta)
                    .map_err(|e| anyhow::anyhow!("scheme.gamma_tilde: {e}"))?;
                table.row(p.csv_row())?;
            }
        }
        table.finish()?;
    }
    Ok(())
}
