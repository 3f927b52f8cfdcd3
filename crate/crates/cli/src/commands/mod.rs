pub mod build_env;
pub mod emit;
pub mod eval;
pub mod filter;
pub mod rollout;
pub mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use dxdistill::environment::load_corpus;
use dxdistill::gateway::SamplingParams;
use dxdistill::ClinicalEnvironment;
use serde::Serialize;

use crate::Usage;

/// Sampling for oracle, extraction and judging calls.
pub fn aux_params() -> SamplingParams {
    SamplingParams {
        temperature: 0.0,
        ..Default::default()
    }
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn require_dir(dir: &Path, what: &str) -> anyhow::Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Usage(format!("{what} {} is not a directory", dir.display())).into())
    }
}

/// Environments keyed by case id.
pub fn load_cases(dir: &Path) -> anyhow::Result<BTreeMap<String, ClinicalEnvironment>> {
    require_dir(dir, "case directory")?;
    let corpus = load_corpus(dir).with_context(|| format!("loading cases from {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for env in corpus {
        let id = env.case_id.clone();
        if out.insert(id.clone(), env).is_some() {
            anyhow::bail!("duplicate case id {id:?} in {}", dir.display());
        }
    }
    Ok(out)
}

/// Files in `dir` with the given extension, sorted by name.
pub fn files_with_ext(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
