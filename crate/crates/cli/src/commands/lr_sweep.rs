//! Final test accuracy over `beta x alpha x seed`, and the best rate per `beta`.
//!
//! `alpha*(beta)` maximizes the seed-mean final test accuracy; rates where any
//! seed diverged are excluded, and ties go to the smaller rate.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use super::{mean, setup, RunOptions, SeedOverride};
use crate::config::LrSweepConfig;
use crate::output::f;
use tempdyn_core::dynamics::{train, Mode, TrainConfig, Trajectory};
use tempdyn_core::model::{correlated_init, init_params, Mlp};

pub const HEADER: [&str; 10] = [
    "beta",
    "alpha",
    "eta_tilde",
    "seed",
    "final_test_acc",
    "final_train_acc",
    "final_loss",
    "final_z_norm",
    "diverged",
    "config_hash",
];

pub const ALPHA_STAR_HEADER: [&str; 4] = ["beta", "alpha_star", "mean_test_acc", "excluded_alphas"];

impl SeedOverride for LrSweepConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

#[derive(Clone, Copy, Debug)]
struct Outcome {
    test_acc: f64,
    train_acc: f64,
    loss: f64,
    z_norm: f64,
    diverged: bool,
}

/// Least-squares line through `(x, y)`; `None` with fewer than two distinct `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Index of the best mean accuracy among admissible rates, ties to the smaller rate.
pub fn argmax_rate(alphas: &[f64], scores: &[Option<f64>]) -> Option<usize> {
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    let mut best: Option<(usize, f64)> = None;
    for i in order {
        if let Some(s) = scores[i] {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Serialize)]
struct Summary {
    slope: Option<f64>,
    intercept: Option<f64>,
    fitted_points: usize,
}

fn outcome(traj: &Trajectory<f64>) -> Outcome {
    let last = traj.last().expect("step 0 is always recorded");
    Outcome {
        test_acc: last.test_acc,
        train_acc: last.train_acc,
        loss: last.loss,
        z_norm: last.z_norm,
        diverged: traj.is_diverged(),
    }
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<LrSweepConfig>(opts, "lr-sweep", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let data = &s.data;
    if data.test.is_empty() {
        anyhow::bail!("dataset: lr-sweep scores test accuracy and needs a test split");
    }
    let hash = s.out.hash().to_string();
    let mlp = Mlp::new(cfg.model.clone())?;

    let mut grid = Vec::new();
    for &beta in &cfg.betas {
        for &alpha in &cfg.alphas {
            for &seed in &cfg.seeds {
                grid.push((beta, alpha, seed));
            }
        }
    }
    let outcomes: Vec<Outcome> = grid
        .par_iter()
        .map(|&(beta, alpha, seed)| -> Result<Outcome> {
            let train_cfg = TrainConfig {
                beta,
                alpha: Some(alpha),
                eta_tilde: None,
                momentum: None,
                l2: 0.0,
                mode: Mode::Nonlinear,
                integrator: Default::default(),
                steps: cfg.steps,
                record_every: cfg.steps,
                seed,
            };
            let traj = match cfg.correlation {
                Some(c) => {
                    let model = correlated_init::<f64>(&cfg.model, seed, c)?;
                    train(&model, model.trainable_init().as_slice(), data, &train_cfg)?
                }
                None => {
                    let p0 = init_params::<f64>(&cfg.model, seed);
                    train(&mlp, p0.as_slice(), data, &train_cfg)?
                }
            };
            Ok(outcome(&traj))
        })
        .collect::<Result<_>>()?;

    let mut table = s.out.csv("lr_sweep.csv", &HEADER)?;
    for (&(beta, alpha, seed), o) in grid.iter().zip(&outcomes) {
        let nan = f64::NAN;
        let m = |v: f64| if o.diverged { nan } else { v };
        table.row([
            f(beta),
            f(alpha),
            f(alpha * beta * beta),
            seed.to_string(),
            f(m(o.test_acc)),
            f(m(o.train_acc)),
            f(m(o.loss)),
            f(m(o.z_norm)),
            o.diverged.to_string(),
            hash.clone(),
        ])?;
    }
    table.finish()?;

    let per_beta = cfg.alphas.len() * cfg.seeds.len();
    let mut stars = s.out.csv("alpha_star.csv", &ALPHA_STAR_HEADER)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (b, &beta) in cfg.betas.iter().enumerate() {
        let block = &outcomes[b * per_beta..(b + 1) * per_beta];
        let scores: Vec<Option<f64>> = block
            .chunks(cfg.seeds.len())
            .map(|runs| {
                if runs.iter().any(|o| o.diverged) {
                    None
                } else {
                    Some(mean(&runs.iter().map(|o| o.test_acc).collect::<Vec<_>>()))
                }
            })
            .collect();
        let excluded = scores.iter().filter(|s| s.is_none()).count();
        match argmax_rate(&cfg.alphas, &scores) {
            Some(i) => {
                let a = cfg.alphas[i];
                xs.push(beta.ln());
                ys.push(a.ln());
                stars.row([f(beta), f(a), f(scores[i].expect("admissible")), excluded.to_string()])?;
            }
            None => stars.row([f(beta), "NaN".into(), "NaN".into(), excluded.to_string()])?,
        }
    }
    stars.finish()?;
    let fit = fit_line(&xs, &ys);
    s.out.write_json(
        "summary.json",
        &Summary {
            slope: fit.map(|p| p.0),
            intercept: fit.map(|p| p.1),
            fitted_points: xs.len(),
        },
    )
}
