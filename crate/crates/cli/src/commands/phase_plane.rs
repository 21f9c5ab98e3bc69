//! Training outcomes over the `(beta, c)` plane of initial conditions.

use anyhow::Result;
use rayon::prelude::*;

use super::{setup, RunOptions, SeedOverride};
use crate::config::PhasePlaneConfig;
use crate::output::{f, opt};
use tempdyn_core::dynamics::{train, Mode, TrainConfig};
use tempdyn_core::model::correlated_init;
use tempdyn_core::timescales::{deviation_time, timescale_report};

pub const HEADER: [&str; 17] = [
    "beta",
    "correlation",
    "seed",
    "z0_norm",
    "alpha",
    "eta_tilde",
    "final_test_acc",
    "early_test_acc",
    "final_train_acc",
    "early_train_acc",
    "final_loss",
    "final_z_norm",
    "tau_z",
    "tau_nl",
    "deviation_time",
    "diverged",
    "config_hash",
];

impl SeedOverride for PhasePlaneConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<PhasePlaneConfig>(opts, "phase-plane", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let data = &s.data;
    let hash = s.out.hash().to_string();

    let mut grid = Vec::new();
    for &beta in &cfg.betas {
        for &c in &cfg.correlations {
            for &seed in &cfg.seeds {
                grid.push((beta, c, seed));
            }
        }
    }
    let rows: Vec<Vec<String>> = grid
        .par_iter()
        .map(|&(beta, c, seed)| -> Result<Vec<String>> {
            let model = correlated_init::<f64>(&cfg.model, seed, c)?;
            let p0 = model.trainable_init().as_slice();
            let alpha = cfg.rate.alpha(beta);
            let eta = cfg.rate.eta_tilde(beta);
            let train_cfg = TrainConfig {
                beta,
                alpha: Some(alpha),
                eta_tilde: None,
                momentum: None,
                l2: 0.0,
                mode: Mode::Nonlinear,
                integrator: Default::default(),
                steps: cfg.steps,
                record_every: 1,
                seed,
            };
            let traj = train(&model, p0, data, &train_cfg)?;
            let report = timescale_report(&model, p0, &data.train, beta, eta)?;
            let deviation = if cfg.linearized_reference {
                let lin = train(
                    &model,
                    p0,
                    data,
                    &TrainConfig {
                        mode: Mode::Linearized,
                        ..train_cfg.clone()
                    },
                )?;
                deviation_time(&traj, &lin, cfg.deviation_tol)?
            } else {
                None
            };
            let diverged = traj.is_diverged();
            let nan = f64::NAN;
            let last = traj.last().expect("step 0 is always recorded");
            let early = traj.records.get(cfg.early_step);
            let metric = |v: f64| if diverged { nan } else { v };
            Ok(vec![
                f(beta),
                f(c),
                seed.to_string(),
                f(report.z0_norm),
                f(alpha),
                f(eta),
                f(metric(last.test_acc)),
                f(metric(early.map_or(nan, |r| r.test_acc))),
                f(metric(last.train_acc)),
                f(metric(early.map_or(nan, |r| r.train_acc))),
                f(metric(last.loss)),
                f(metric(last.z_norm)),
                f(report.tau_z),
                f(report.tau_nl),
                opt(deviation),
                diverged.to_string(),
                hash.clone(),
            ])
        })
        .collect::<Result<_>>()?;

    let mut table = s.out.csv("phase_plane.csv", &HEADER)?;
    for row in rows {
        table.row(row)?;
    }
    table.finish()
}
