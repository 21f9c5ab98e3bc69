//! Exact softmax-Jacobian spectra against the large-`beta` approximation.

use anyhow::{bail, Result};

use super::{load, RunOptions, SeedOverride};
use crate::config::SpectraConfig;
use crate::output::{f, OutDir};
use tempdyn_core::loss::{dsoftmax_spectrum_largebeta, softmax_jacobian};
use tempdyn_core::model::gaussian_vector;

pub const HEADER: [&str; 5] = ["beta", "index", "exact", "approx", "rel_error"];

/// Random stream used for drawn logits.
const LOGIT_STREAM: u64 = 30;

impl SeedOverride for SpectraConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

fn descending(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let cfg: SpectraConfig = load(opts)?;
    let mut z = match (&cfg.logits, cfg.num_classes) {
        (Some(l), _) => l.clone(),
        (None, Some(k)) => gaussian_vector(cfg.seed, LOGIT_STREAM, k),
        (None, None) => unreachable!("validated"),
    };
    if z.iter().any(|v| !v.is_finite()) {
        bail!("logits: must be finite");
    }
    descending(&mut z);
    let out = OutDir::create(opts.out, "spectra", &cfg)?;
    out.write_json("logits.json", &z)?;

    let mut table = out.csv("spectra.csv", &HEADER)?;
    for &beta in &cfg.betas {
        let scaled: Vec<f64> = z.iter().map(|v| beta * v).collect();
        let mut exact = softmax_jacobian(&scaled)?.eigenvalues()?;
        descending(&mut exact);
        let mut approx: Vec<f64> = dsoftmax_spectrum_largebeta(&z, beta)?
            .into_iter()
            .map(|p| p.value)
            .collect();
        descending(&mut approx);
        for (i, (&e, &a)) in exact.iter().zip(&approx).enumerate() {
            table.row([
                f(beta),
                i.to_string(),
                f(e),
                f(a),
                f((a - e).abs() / e.abs()),
            ])?;
        }
    }
    table.finish()
}
