//! Summaries of any output directory, printed as JSON.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context as _;
use dxdistill::dataset::{emission_stats, read_jsonl};
use dxdistill::rollout::{materialize_paths, read_store, MaterializeStats, TrajectoryTree};
use serde_json::{json, Value};

use super::{files_with_ext, require_dir};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::Outcome;

fn is_training_file(name: &str) -> bool {
    name == "train.jsonl" || (name.starts_with("train-") && name.ends_with(".jsonl"))
}

pub fn run(dir: &Path) -> anyhow::Result<Outcome> {
    require_dir(dir, "directory")?;
    let mut summary = BTreeMap::<&str, Value>::new();

    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let text = std::fs::read_to_string(&manifest_path)?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
        summary.insert("command", json!(m.command));
        summary.insert("counters", json!(m.counters));
        summary.insert("errors", json!(m.errors.len()));
    }

    let mut records = Vec::new();
    let mut nodes = 0usize;
    let mut cases = 0usize;
    let mut paths = MaterializeStats::default();
    for file in files_with_ext(dir, "jsonl")? {
        let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if is_training_file(&name) {
            records.extend(read_jsonl(&file)?);
        } else if name != "filtered.jsonl" {
            let (store, _) = read_store(&file).with_context(|| format!("reading {name}"))?;
            let Some(first) = store.first() else { continue };
            cases += 1;
            nodes += store.len();
            let tree = TrajectoryTree {
                case_id: first.case_id.clone(),
                nodes: store,
                config: Default::default(),
            };
            let (_, s) = materialize_paths(&tree);
            paths.trajectories += s.trajectories;
            paths.failed_roots += s.failed_roots;
            paths.failed_paths += s.failed_paths;
        }
    }
    if cases > 0 {
        summary.insert("stores", json!({ "cases": cases, "nodes": nodes, "paths": paths }));
    }
    if !records.is_empty() {
        summary.insert("emission", json!(emission_stats(&records)));
    }
    let report = dir.join("report.json");
    if report.is_file() {
        let value: Value = serde_json::from_str(&std::fs::read_to_string(&report)?)?;
        for key in ["retention", "materialize", "report"] {
            if let Some(v) = value.get(key) {
                summary.insert(key, v.clone());
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Success)
}
