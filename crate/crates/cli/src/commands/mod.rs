use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{check_compatible, read_config, DatasetConfig, Validate};
use crate::output::OutDir;
use tempdyn_core::datasets::Dataset;
use tempdyn_core::model::NetworkSpec;

pub mod collapse;
pub mod fixedpoint;
pub mod lr_sweep;
pub mod momentum;
pub mod ntk_dump;
pub mod phase_plane;
pub mod spectra;
pub mod timescales;

/// Options shared by every command.
#[derive(Clone, Debug)]
pub struct RunOptions<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub seed_override: Option<u64>,
}

pub trait SeedOverride {
    fn override_seed(&mut self, seed: u64);
}

/// Problem shared by the commands that train a network.
pub struct Setup<C> {
    pub config: C,
    pub data: Dataset<f64>,
    pub out: OutDir,
}

pub fn load<C>(opts: &RunOptions<'_>) -> Result<C>
where
    C: DeserializeOwned + Validate + SeedOverride,
{
    let mut config: C = read_config(opts.config)?;
    if let Some(seed) = opts.seed_override {
        config.override_seed(seed);
    }
    config
        .validate()
        .with_context(|| format!("config {}", opts.config.display()))?;
    Ok(config)
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or_else(|| Path::new("."))
}

/// Loads, validates and resolves a config with a model and a dataset, then
/// prepares the output directory.
pub fn setup<C>(
    opts: &RunOptions<'_>,
    command: &str,
    parts: impl Fn(&mut C) -> (&NetworkSpec, &mut DatasetConfig),
) -> Result<Setup<C>>
where
    C: DeserializeOwned + Serialize + Validate + SeedOverride,
{
    let mut config: C = load(opts)?;
    let (spec, dataset) = parts(&mut config);
    let spec = spec.clone();
    dataset.resolve_paths(base_dir(opts.config));
    let data = dataset.load()?;
    check_compatible(&spec, &data)?;
    let out = OutDir::create(opts.out, command, &config)?;
    out.write_dataset(&data)?;
    Ok(Setup { config, data, out })
}

/// Mean over examples of the `f64` values, NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
