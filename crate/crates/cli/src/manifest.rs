use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use csgd::config::RunConfig;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
struct Versions {
    csgd_cli: &'static str,
    csgd_core: &'static str,
    manifest_format: u32,
}

/// Provenance record written next to every results file. Nothing in it
/// depends on the clock, so identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, A: Serialize> {
    command: &'a str,
    seed: u64,
    arguments: &'a A,
    config: Option<&'a RunConfig>,
    outputs: Vec<String>,
    summary: Value,
    versions: Versions,
}

impl<'a, A: Serialize> Manifest<'a, A> {
    pub fn new(command: &'a str, seed: u64, arguments: &'a A) -> Self {
        Self {
            command,
            seed,
            arguments,
            config: None,
            outputs: Vec::new(),
            summary: Value::Null,
            versions: Versions {
                csgd_cli: env!("CARGO_PKG_VERSION"),
                csgd_core: csgd::VERSION,
                manifest_format: 1,
            },
        }
    }

    pub fn config(mut self, config: &'a RunConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn summary(mut self, summary: Value) -> Self {
        self.summary = summary;
        self
    }

    /// Writes `<results stem>.manifest.json` beside `results`.
    pub fn write_beside(&self, results: &Path) -> Result<PathBuf> {
        let path = manifest_path(results);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(results: &Path) -> PathBuf {
    results.with_extension("manifest.json")
}
