//! One manifest per output directory, enough to re-run the stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use dxdistill::dataset::PIPELINE_VERSION;
use dxdistill::RunConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    /// Resolved configuration, CLI overrides applied.
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: BTreeMap<String, PathBuf>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub pipeline_version: String,
    /// Omitted in deterministic mode so manifests are reproducible too.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
    pub counters: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    deterministic: bool,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_path: Option<&Path>, config: &RunConfig, seed: u64, deterministic: bool) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                config_path: config_path.map(Path::to_path_buf),
                config: config.clone(),
                seed,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                pipeline_version: PIPELINE_VERSION.to_owned(),
                wall_clock_ms: None,
                counters: BTreeMap::new(),
                errors: Vec::new(),
            },
            started: Instant::now(),
            deterministic,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.inputs.insert(name.to_owned(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, file: impl Into<String>) {
        self.manifest.outputs.push(file.into());
    }

    pub fn count(&mut self, name: &str, by: u64) {
        *self.manifest.counters.entry(name.to_owned()).or_default() += by;
    }

    pub fn set(&mut self, name: &str, value: u64) {
        self.manifest.counters.insert(name.to_owned(), value);
    }

    pub fn error(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::error!("{message}");
        self.manifest.errors.push(message);
    }

    pub fn has_errors(&self) -> bool {
        !self.manifest.errors.is_empty()
    }

    pub fn write(mut self, out_dir: &Path) -> anyhow::Result<RunManifest> {
        if !self.deterministic {
            self.manifest.wall_clock_ms = Some(self.started.elapsed().as_millis() as u64);
        }
        self.manifest.outputs.sort();
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
