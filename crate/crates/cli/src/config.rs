//! Experiment configuration files.
//!
//! Every command reads one JSON document. Unknown keys are rejected, missing
//! optional keys take the defaults written back into `config.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tempdyn_core::datasets::{gaussian_blobs, read_csv_split, shuffle_labels, Dataset, DatasetDescriptor, Split};
use tempdyn_core::dynamics::Integrator;
use tempdyn_core::linalg::Matrix;
use tempdyn_core::model::NetworkSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    GaussianBlobs {
        num_classes: usize,
        train_size: usize,
        #[serde(default)]
        test_size: usize,
        input_dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shuffle_labels_seed: Option<u64>,
    },
    Csv {
        train_path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shuffle_labels_seed: Option<u64>,
    },
}

impl DatasetConfig {
    /// Relative CSV paths are taken relative to the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetConfig::Csv {
            train_path,
            test_path,
            ..
        } = self
        {
            if train_path.is_relative() {
                *train_path = base.join(&*train_path);
            }
            if let Some(p) = test_path {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn load(&self) -> Result<Dataset<f64>> {
        let (data, shuffle) = match self {
            DatasetConfig::GaussianBlobs {
                num_classes,
                train_size,
                test_size,
                input_dim,
                separation,
                seed,
                shuffle_labels_seed,
            } => (
                gaussian_blobs(*num_classes, *train_size, *test_size, *input_dim, *separation, *seed)
                    .context("dataset")?,
                *shuffle_labels_seed,
            ),
            DatasetConfig::Csv {
                train_path,
                test_path,
                shuffle_labels_seed,
            } => {
                let (xtr, ltr) = read_csv_split::<f64>(train_path)
                    .with_context(|| format!("dataset.train_path {}", train_path.display()))?;
                let (xte, lte) = match test_path {
                    Some(p) => read_csv_split::<f64>(p)
                        .with_context(|| format!("dataset.test_path {}", p.display()))?,
                    None => (Matrix::zeros(0, xtr.cols()), Vec::new()),
                };
                if xte.cols() != xtr.cols() {
                    bail!("dataset: train and test files have different feature counts");
                }
                let k = ltr
                    .iter()
                    .chain(&lte)
                    .max()
                    .map_or(2, |&l| (l + 1).max(2));
                let data = Dataset {
                    train: Split::new(xtr, &ltr, k)?,
                    test: Split::new(xte, &lte, k)?,
                    num_classes: k,
                    descriptor: DatasetDescriptor::Csv {
                        train_path: train_path.display().to_string(),
                        test_path: test_path.as_ref().map(|p| p.display().to_string()),
                    },
                    label_shuffle_seed: None,
                };
                (data, *shuffle_labels_seed)
            }
        };
        match shuffle {
            Some(seed) => Ok(shuffle_labels(&data, seed)?),
            None => Ok(data),
        }
    }
}

/// Description written to `dataset.json`.
#[derive(Serialize)]
pub struct DatasetRecord<'a> {
    #[serde(flatten)]
    pub descriptor: &'a DatasetDescriptor,
    pub shuffle_labels_seed: Option<u64>,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub input_dim: usize,
}

impl<'a> DatasetRecord<'a> {
    pub fn new(data: &'a Dataset<f64>) -> Self {
        Self {
            descriptor: &data.descriptor,
            shuffle_labels_seed: data.label_shuffle_seed,
            num_classes: data.num_classes,
            train_size: data.train.len(),
            test_size: data.test.len(),
            input_dim: data.input_dim(),
        }
    }
}

fn default_record_every() -> usize {
    1
}

fn default_correlation() -> f64 {
    -1.0
}

fn default_deviation_tol() -> f64 {
    tempdyn_core::timescales::DEFAULT_DEVIATION_TOL
}

fn default_early_step() -> usize {
    20
}

fn default_true() -> bool {
    true
}

/// One of `alpha` and `eta_tilde`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Rate {
    Alpha(f64),
    EtaTilde(f64),
}

impl Rate {
    pub fn alpha(self, beta: f64) -> f64 {
        match self {
            Rate::Alpha(a) => a,
            Rate::EtaTilde(e) => e / (beta * beta),
        }
    }

    pub fn eta_tilde(self, beta: f64) -> f64 {
        match self {
            Rate::Alpha(a) => a * beta * beta,
            Rate::EtaTilde(e) => e,
        }
    }

    fn value(self) -> f64 {
        match self {
            Rate::Alpha(v) | Rate::EtaTilde(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    pub betas: Vec<f64>,
    /// Output-branch correlation; the default `-1` starts every run at `Z = 0`.
    #[serde(default = "default_correlation")]
    pub correlation: f64,
    pub eta_tilde: f64,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "discrete_steps")]
    pub integrator: Integrator,
    #[serde(default)]
    pub seed: u64,
    /// Collapse window in `eta_tilde t`; defaults to a tenth of the smallest `tau_nl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_cut: Option<f64>,
    #[serde(default = "default_deviation_tol")]
    pub deviation_tol: f64,
}

fn discrete_steps() -> Integrator {
    Integrator::DiscreteSteps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimescalesConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    pub betas: Vec<f64>,
    /// Target `|Z0|_F` values, reached through the output-branch correlation.
    pub z0_norms: Vec<f64>,
    pub eta_tilde: f64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlaneConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    pub betas: Vec<f64>,
    pub correlations: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rate: Rate,
    pub steps: usize,
    #[serde(default = "default_early_step")]
    pub early_step: usize,
    /// Also run the linearized flow to measure the deviation time.
    #[serde(default = "default_true")]
    pub linearized_reference: bool,
    #[serde(default = "default_deviation_tol")]
    pub deviation_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSweepConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Output-branch correlation; absent means a plain single-branch network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraConfig {
    /// Logits to analyse; drawn at random (sorted descending) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub betas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Empirical,
    Analytic,
}

fn empirical() -> KernelKind {
    KernelKind::Empirical
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeRegime {
    pub beta: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    #[serde(default = "empirical")]
    pub kernel: KernelKind,
    #[serde(default)]
    pub seed: u64,
    pub beta: f64,
    pub l2: f64,
    /// Raw flow time; defaults to `40 / l2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Two-class large-logit solve; skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub large: Option<LargeRegime>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeTable {
    pub betas: Vec<f64>,
    pub eta_tilde: f64,
    pub alpha_hat: f64,
    pub gamma_tilde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentumConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    pub beta: f64,
    /// Canonical damping `gamma / sqrt(alpha)` shared by all runs.
    pub gamma_tilde: f64,
    pub alphas: Vec<f64>,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeTable>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    Csv,
    Bin,
}

fn csv_format() -> DumpFormat {
    DumpFormat::Csv
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpSplit {
    Train,
    TestTrain,
}

fn train_split() -> DumpSplit {
    DumpSplit::Train
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkDumpConfig {
    pub model: NetworkSpec,
    pub dataset: DatasetConfig,
    #[serde(default = "empirical")]
    pub kernel: KernelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "train_split")]
    pub split: DumpSplit,
    #[serde(default = "csv_format")]
    pub format: DumpFormat,
}

/// Parses a config file, naming the file in every error.
pub fn read_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

/// SHA-256 of the canonical JSON form of a resolved config.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn nonempty<T>(key: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        bail!("{key}: grid must not be empty");
    }
    Ok(())
}

pub fn positive(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{key}: must be positive, got {v}");
    }
    Ok(())
}

pub fn all_positive(key: &str, v: &[f64]) -> Result<()> {
    nonempty(key, v)?;
    for &x in v {
        positive(key, x)?;
    }
    Ok(())
}

pub fn correlation(key: &str, c: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&c) {
        bail!("{key}: correlation {c} outside [-1, 1]");
    }
    Ok(())
}

pub fn model(spec: &NetworkSpec) -> Result<()> {
    spec.validate().context("model")
}

pub trait Validate {
    fn validate(&self) -> Result<()>;
}

impl Validate for CollapseConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        all_positive("betas", &self.betas)?;
        correlation("correlation", self.correlation)?;
        positive("eta_tilde", self.eta_tilde)?;
        if self.steps == 0 {
            bail!("steps: must be positive");
        }
        if self.record_every == 0 {
            bail!("record_every: must be positive");
        }
        if let Some(t) = self.t_cut {
            positive("t_cut", t)?;
        }
        if self.deviation_tol.is_nan() || self.deviation_tol < 0.0 {
            bail!("deviation_tol: must be nonnegative");
        }
        Ok(())
    }
}

impl Validate for TimescalesConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        all_positive("betas", &self.betas)?;
        all_positive("z0_norms", &self.z0_norms)?;
        positive("eta_tilde", self.eta_tilde)?;
        nonempty("seeds", &self.seeds)
    }
}

impl Validate for PhasePlaneConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        all_positive("betas", &self.betas)?;
        nonempty("correlations", &self.correlations)?;
        for &c in &self.correlations {
            correlation("correlations", c)?;
        }
        nonempty("seeds", &self.seeds)?;
        positive("rate", self.rate.value())?;
        if self.steps == 0 {
            bail!("steps: must be positive");
        }
        if self.early_step > self.steps {
            bail!("early_step: {} exceeds steps {}", self.early_step, self.steps);
        }
        Ok(())
    }
}

impl Validate for LrSweepConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        all_positive("betas", &self.betas)?;
        all_positive("alphas", &self.alphas)?;
        nonempty("seeds", &self.seeds)?;
        if self.steps == 0 {
            bail!("steps: must be positive");
        }
        if let Some(c) = self.correlation {
            correlation("correlation", c)?;
        }
        Ok(())
    }
}

impl Validate for SpectraConfig {
    fn validate(&self) -> Result<()> {
        all_positive("betas", &self.betas)?;
        match (&self.logits, self.num_classes) {
            (Some(l), None) if l.len() >= 2 => Ok(()),
            (None, Some(k)) if k >= 2 => Ok(()),
            (Some(_), Some(_)) => bail!("logits, num_classes: give only one"),
            _ => bail!("logits or num_classes: need at least two classes"),
        }
    }
}

impl Validate for FixedPointConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        positive("beta", self.beta)?;
        positive("l2", self.l2)?;
        if let Some(h) = self.horizon {
            positive("horizon", h)?;
        }
        if let Some(l) = &self.large {
            positive("large.beta", l.beta)?;
            positive("large.l2", l.l2)?;
            if self.model.num_classes != 2 {
                bail!("large: the large-logit solver needs model.num_classes = 2");
            }
        }
        Ok(())
    }
}

impl Validate for MomentumConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)?;
        positive("beta", self.beta)?;
        positive("gamma_tilde", self.gamma_tilde)?;
        all_positive("alphas", &self.alphas)?;
        for &a in &self.alphas {
            let gamma = self.gamma_tilde * a.sqrt();
            if gamma.is_nan() || gamma > 1.0 {
                bail!("alphas: alpha = {a} gives gamma = {gamma} > 1 (needs alpha < gamma_tilde^-2)");
            }
        }
        if self.steps == 0 || self.record_every == 0 {
            bail!("steps, record_every: must be positive");
        }
        if let Some(s) = &self.scheme {
            all_positive("scheme.betas", &s.betas)?;
            positive("scheme.eta_tilde", s.eta_tilde)?;
            positive("scheme.alpha_hat", s.alpha_hat)?;
            positive("scheme.gamma_tilde", s.gamma_tilde)?;
        }
        Ok(())
    }
}

impl Validate for NtkDumpConfig {
    fn validate(&self) -> Result<()> {
        model(&self.model)
    }
}

/// Checks that a dataset fits the network it will train.
pub fn check_compatible(spec: &NetworkSpec, data: &Dataset<f64>) -> Result<()> {
    if data.input_dim() != spec.input_dim {
        bail!(
            "model.input_dim: {} but the dataset has {} features",
            spec.input_dim,
            data.input_dim()
        );
    }
    if data.num_classes != spec.num_classes {
        bail!(
            "model.num_classes: {} but the dataset has {} classes",
            spec.num_classes,
            data.num_classes
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn collapse() -> serde_json::Value {
        json!({
            "model": {"input_dim": 4, "hidden_widths": [8], "num_classes": 2, "activation": "relu",
                      "weight_scale": 1.0, "bias_scale": 0.0},
            "dataset": {"generator": "gaussian_blobs", "num_classes": 2, "train_size": 8,
                        "input_dim": 4, "separation": 2.0},
            "betas": [0.5, 1.0],
            "eta_tilde": 0.1,
            "steps": 10
        })
    }

    fn parse<C: DeserializeOwned>(v: serde_json::Value) -> serde_json::Result<C> {
        serde_json::from_value(v)
    }

    #[test]
    fn defaults_fill_in() {
        let c: CollapseConfig = parse(collapse()).unwrap();
        assert_eq!(c.correlation, -1.0);
        assert_eq!(c.record_every, 1);
        assert_eq!(c.integrator, Integrator::DiscreteSteps);
        assert_eq!(c.t_cut, None);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = collapse();
        v["betaz"] = json!([1.0]);
        let err = parse::<CollapseConfig>(v).unwrap_err().to_string();
        assert!(err.contains("betaz"), "{err}");
        let mut v = collapse();
        v["dataset"]["noise"] = json!(1.0);
        assert!(parse::<CollapseConfig>(v).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let mut c: CollapseConfig = parse(collapse()).unwrap();
        c.betas = vec![1.0, -2.0];
        assert!(c.validate().unwrap_err().to_string().starts_with("betas"));
        c.betas = vec![];
        assert!(c.validate().is_err());
        c.betas = vec![1.0];
        c.correlation = 1.5;
        assert!(c.validate().unwrap_err().to_string().starts_with("correlation"));
    }

    #[test]
    fn rate_converts_both_ways() {
        assert!((Rate::EtaTilde(0.4).alpha(2.0) - 0.1).abs() < 1e-15);
        assert!((Rate::Alpha(0.1).eta_tilde(2.0) - 0.4).abs() < 1e-15);
        let r: Rate = parse(json!({"eta_tilde": 0.3})).unwrap();
        assert_eq!(r, Rate::EtaTilde(0.3));
    }

    #[test]
    fn momentum_rejects_gamma_above_one() {
        let c = MomentumConfig {
            model: parse(collapse()["model"].clone()).unwrap(),
            dataset: parse(collapse()["dataset"].clone()).unwrap(),
            beta: 1.0,
            gamma_tilde: 4.0,
            alphas: vec![0.01, 0.1],
            steps: 10,
            record_every: 1,
            seed: 0,
            scheme: None,
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("gamma_tilde^-2"), "{err}");
    }

    #[test]
    fn spectra_needs_exactly_one_source() {
        let mut c = SpectraConfig { logits: Some(vec![1.0, 0.0]), num_classes: None, seed: 0, betas: vec![1.0] };
        c.validate().unwrap();
        c.num_classes = Some(3);
        assert!(c.validate().is_err());
        c.logits = None;
        c.validate().unwrap();
        c.num_classes = Some(1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a: CollapseConfig = parse(collapse()).unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed = 7;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn incompatible_dataset_is_reported() {
        let c: CollapseConfig = parse(collapse()).unwrap();
        let data = c.dataset.load().unwrap();
        let mut spec = c.model.clone();
        check_compatible(&spec, &data).unwrap();
        spec.input_dim = 5;
        assert!(check_compatible(&spec, &data).unwrap_err().to_string().starts_with("model.input_dim"));
    }
}
