//! `tau_z` and `tau_nl` over a grid of `beta` and target `|Z0|_F`.
//!
//! A target norm is reached by choosing the output-branch correlation
//! `c = (target / (beta |z0|))^2 - 1`; targets needing `c > 1` are unreachable.

use anyhow::Result;
use rayon::prelude::*;

use super::{setup, RunOptions, SeedOverride};
use crate::config::TimescalesConfig;
use crate::output::f;
use tempdyn_core::model::correlated_init;
use tempdyn_core::timescales::{timescale_report, TimescaleReport, TIMESCALE_HEADER};

pub const EXTRA_HEADER: [&str; 7] = [
    "seed",
    "target_z0_norm",
    "correlation",
    "reachable",
    "tau_z_ratio",
    "tau_nl_ratio",
    "richardson_ok",
];

impl SeedOverride for TimescalesConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

/// Correlation giving `E |Z0|_F = target` for base logit norm `base`.
pub fn correlation_for(target: f64, beta: f64, base: f64) -> f64 {
    (target / (beta * base)).powi(2) - 1.0
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<TimescalesConfig>(opts, "timescales", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let train = &s.data.train;

    let mut grid = Vec::new();
    for &beta in &cfg.betas {
        for &target in &cfg.z0_norms {
            for &seed in &cfg.seeds {
                grid.push((beta, target, seed));
            }
        }
    }
    let rows: Vec<Vec<String>> = grid
        .par_iter()
        .map(|&(beta, target, seed)| -> Result<Vec<String>> {
            let base = correlated_init::<f64>(&cfg.model, seed, 0.0)?
                .base_logits(&train.x)?
                .frobenius_norm();
            let c = correlation_for(target, beta, base);
            let reachable = c <= 1.0;
            let report = if reachable {
                let model = correlated_init::<f64>(&cfg.model, seed, c)?;
                timescale_report(&model, model.trainable_init().as_slice(), train, beta, cfg.eta_tilde)?
            } else {
                TimescaleReport {
                    beta,
                    z0_norm: f64::NAN,
                    eta_tilde: cfg.eta_tilde,
                    tau_z: f64::NAN,
                    tau_nl: f64::NAN,
                    tau_z_raw: f64::NAN,
                    tau_nl_raw: f64::NAN,
                    tau_nl_below_noise: false,
                    richardson_ok: false,
                }
            };
            let mut row: Vec<String> = report.csv_row().into();
            row.extend([
                seed.to_string(),
                f(target),
                f(c),
                reachable.to_string(),
                f(report.tau_z / report.z0_norm),
                f(report.tau_nl / beta),
                report.richardson_ok.to_string(),
            ]);
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let header: Vec<&str> = TIMESCALE_HEADER.iter().chain(&EXTRA_HEADER).copied().collect();
    let mut table = s.out.csv("timescales.csv", &header)?;
    for row in rows {
        table.row(row)?;
    }
    table.finish()
}
