//! Learning curves across `beta` at a fixed initial logit scale, on the `eta_tilde t` axis.

use anyhow::Result;
use rayon::prelude::*;

use super::{setup, RunOptions, SeedOverride};
use crate::config::CollapseConfig;
use crate::output::{f, opt, tag};
use tempdyn_core::dynamics::{train, Field, Mode, TimeAxis, TrainConfig, Trajectory};
use tempdyn_core::model::correlated_init;
use tempdyn_core::timescales::{collapse_metric, deviation_time, tau_nl};

pub const SUMMARY_HEADER: [&str; 8] = [
    "beta",
    "z0_norm",
    "correlation",
    "tau_nl",
    "deviation_time",
    "diverged",
    "collapse_loss",
    "t_cut",
];

impl SeedOverride for CollapseConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

struct Point {
    beta: f64,
    z0_norm: f64,
    tau_nl: f64,
    nonlinear: Trajectory<f64>,
    linearized: Trajectory<f64>,
    deviation: Option<f64>,
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<CollapseConfig>(opts, "collapse", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let data = &s.data;
    let model = correlated_init::<f64>(&cfg.model, cfg.seed, cfg.correlation)?;
    let p0 = model.trainable_init().as_slice();

    let points: Vec<Point> = cfg
        .betas
        .par_iter()
        .map(|&beta| -> Result<Point> {
            let nl = tau_nl(&model, p0, &data.train, beta)?;
            let train_cfg = TrainConfig {
                beta,
                alpha: None,
                eta_tilde: Some(cfg.eta_tilde),
                momentum: None,
                l2: 0.0,
                mode: Mode::Nonlinear,
                integrator: cfg.integrator,
                steps: cfg.steps,
                record_every: cfg.record_every,
                seed: cfg.seed,
            };
            let nonlinear = train(&model, p0, data, &train_cfg)?;
            let linearized = train(
                &model,
                p0,
                data,
                &TrainConfig {
                    mode: Mode::Linearized,
                    integrator: Default::default(),
                    ..train_cfg
                },
            )?;
            let deviation = deviation_time(&nonlinear, &linearized, cfg.deviation_tol)?;
            Ok(Point {
                beta,
                z0_norm: nonlinear.records[0].z_norm,
                tau_nl: nl.tau_nl,
                nonlinear,
                linearized,
                deviation,
            })
        })
        .collect::<Result<_>>()?;

    let t_cut = cfg.t_cut.unwrap_or_else(|| {
        0.1 * points.iter().map(|p| p.tau_nl).fold(f64::INFINITY, f64::min)
    });
    let collapse = if points.len() >= 2 {
        let curves: Vec<_> = points
            .iter()
            .map(|p| p.nonlinear.curve(Field::Loss, TimeAxis::EtaTilde))
            .collect();
        collapse_metric(&curves, t_cut).ok()
    } else {
        None
    };

    let mut summary = s.out.csv("summary.csv", &SUMMARY_HEADER)?;
    for p in &points {
        let b = tag(p.beta);
        p.nonlinear
            .write_csv(s.out.file(&format!("traj_beta_{b}_nonlinear.csv"))?)?;
        p.linearized
            .write_csv(s.out.file(&format!("traj_beta_{b}_linearized.csv"))?)?;
        summary.row([
            f(p.beta),
            f(p.z0_norm),
            f(cfg.correlation),
            f(p.tau_nl),
            opt(p.deviation),
            p.nonlinear.is_diverged().to_string(),
            opt(collapse),
            f(t_cut),
        ])?;
    }
    summary.finish()
}
