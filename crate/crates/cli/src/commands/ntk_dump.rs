//! Writes a tangent kernel as a row-major matrix with a JSON sidecar.

use std::io::Write;

use anyhow::{bail, Result};
use serde::Serialize;

use super::{setup, RunOptions, SeedOverride};
use crate::config::{DumpFormat, DumpSplit, KernelKind, NtkDumpConfig};
use tempdyn_core::kernel::{analytic_ntk_fc, empirical_ntk, KernelStructure};
use tempdyn_core::model::{init_params, Mlp};
use tempdyn_core::Scalar;

impl SeedOverride for NtkDumpConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: &'a str,
    format: DumpFormat,
    /// Little-endian in the binary format.
    /// Little-endian in the binary format.
    dtype: &'static str,
    order: &'static str,
    m1: usize,
    m2: usize,
    k: usize,
    rows: usize,
    cols: usize,
    structure: KernelStructure,
    kernel: KernelKind,
    split: DumpSplit,
}

pub fn run(opts: &RunOptions<'_>) -> Result<()> {
    let s = setup::<NtkDumpConfig>(opts, "ntk-dump", |c| (&c.model, &mut c.dataset))?;
    let cfg = &s.config;
    let train = &s.data.train.x;
    let x1 = match cfg.split {
        DumpSplit::Train => train,
        DumpSplit::TestTrain => {
            if s.data.test.is_empty() {
                bail!("split: test_train needs a test split in the dataset");
            }
            &s.data.test.x
        }
    };
    let theta = match cfg.kernel {
        KernelKind::Empirical => {
            let p0 = init_params::<f64>(&cfg.model, cfg.seed);
            empirical_ntk(&Mlp::new(cfg.model.clone())?, p0.as_slice(), x1, train)?
        }
        KernelKind::Analytic => analytic_ntk_fc(&cfg.model, x1, train)?,
    };
    let dense = theta.to_dense();
    let file = match cfg.format {
        DumpFormat::Csv => "ntk.csv",
        DumpFormat::Bin => "ntk.bin",
    };
    let mut w = s.out.file(file)?;
    match cfg.format {
        DumpFormat::Csv => {
            for r in 0..dense.rows() {
                let line: Vec<String> = dense.row(r).iter().map(|v| v.to_text()).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
        DumpFormat::Bin => {
            for v in dense.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    s.out.write_json(
        "ntk.json",
        &Sidecar {
            file,
            format: cfg.format,
            dtype: "f64",
            order: "row-major, row index m * K + i",
            m1: theta.m1(),
            m2: theta.m2(),
            k: theta.k(),
            rows: dense.rows(),
            cols: dense.cols(),
            structure: theta.structure(),
            kernel: cfg.kernel,
            split: cfg.split,
        },
    )
}
