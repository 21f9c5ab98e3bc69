//! Output directory layout shared by all commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{config_hash, DatasetRecord, SCHEMA_VERSION};
use tempdyn_core::datasets::Dataset;
use tempdyn_core::Scalar;

pub struct OutDir {
    root: PathBuf,
    hash: String,
}

#[derive(Serialize)]
struct Resolved<'a, C> {
    schema_version: u32,
    command: &'a str,
    config_hash: &'a str,
    config: &'a C,
}

impl OutDir {
    /// Creates `root` and writes the resolved config into it.
    pub fn create<C: Serialize>(root: &Path, command: &str, config: &C) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let hash = config_hash(config)?;
        let out = Self {
            root: root.to_path_buf(),
            hash,
        };
        out.write_json(
            "config.json",
            &Resolved {
                schema_version: SCHEMA_VERSION,
                command,
                config_hash: &out.hash,
                config,
            },
        )?;
        Ok(out)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<V: Serialize + ?Sized>(&self, name: &str, value: &V) -> Result<()> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_dataset(&self, data: &Dataset<f64>) -> Result<()> {
        self.write_json("dataset.json", &DatasetRecord::new(data))
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> Result<Table> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        Ok(Table { w, path })
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    }
}

pub struct Table {
    w: csv::Writer<File>,
    path: PathBuf,
}

impl Table {
    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w
            .write_record(fields)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Float formatting used in every table.
pub fn f(v: f64) -> String {
    v.to_text()
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), f)
}

/// Filename-safe rendering of a grid value: `0.25` becomes `0.25`, `-1` becomes `m1`.
pub fn tag(v: f64) -> String {
    let s = v.to_string();
    match s.strip_prefix('-') {
        Some(rest) => format!("m{rest}"),
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_filename_safe() {
        assert_eq!(tag(0.25), "0.25");
        assert_eq!(tag(-1.0), "m1");
        assert_eq!(tag(3.0), "3");
        assert_eq!(opt(None), "NaN");
        assert_eq!(opt(Some(0.5)), f(0.5));
    }

    #[test]
    fn out_dir_records_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("nested/run");
        let out = OutDir::create(&root, "spectra", &serde_json::json!({"betas": [1.0]})).unwrap();
        let text = std::fs::read_to_string(root.join("config.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["command"], "spectra");
        assert_eq!(v["config_hash"], out.hash());
        let mut t = out.csv("t.csv", &["a", "b"]).unwrap();
        t.row(["1", "2"]).unwrap();
        t.finish().unwrap();
        assert_eq!(std::fs::read_to_string(root.join("t.csv")).unwrap(), "a,b\n1,2\n");
    }
}
