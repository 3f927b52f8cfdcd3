//! Filter output in, training records out.

use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::Context as _;
use dxdistill::dataset::{emission_stats, emit, sort_records, write_jsonl, TrainingRecord};

use super::filter::{FilteredTrajectory, FILTERED_FILE};
use super::{create_dir, load_cases, require_dir, write_json};
use crate::manifest::ManifestBuilder;
use crate::{Context, Outcome};

pub const STATS_FILE: &str = "emission.json";

fn read_filtered(path: &Path) -> anyhow::Result<Vec<FilteredTrajectory>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn run(ctx: &Context, filtered: &Path, cases: &Path, out: &Path, shard_size: Option<usize>) -> anyhow::Result<Outcome> {
    require_dir(filtered, "filter output")?;
    let items = read_filtered(&filtered.join(FILTERED_FILE))?;
    let envs = load_cases(cases)?;
    create_dir(out)?;

    let mut manifest = ManifestBuilder::new("emit", ctx.config_path.as_deref(), &ctx.config, ctx.seed, ctx.deterministic);
    manifest.input("filtered", filtered).input("cases", cases);
    let window = ctx.config.rollout.window_size;
    let mut records: Vec<TrainingRecord> = Vec::new();
    for item in &items {
        let traj = &item.trajectory;
        let Some(env) = envs.get(&traj.case_id) else {
            manifest.error(format!("{}: no case {:?}", traj.node_path, traj.case_id));
            continue;
        };
        match emit(traj, &item.outcome, env, window, ctx.seed) {
            Ok(r) => records.extend(r),
            Err(e) => manifest.error(format!("{}:{}: {e}", traj.case_id, traj.node_path)),
        }
    }
    sort_records(&mut records);

    match shard_size {
        None => {
            write_jsonl(&records, out.join("train.jsonl"))?;
            manifest.output("train.jsonl");
        }
        Some(size) => {
            let empty: [&[TrainingRecord]; 1] = [&[]];
            let chunks: Vec<&[TrainingRecord]> = if records.is_empty() {
                empty.to_vec()
            } else {
                records.chunks(size).collect()
            };
            for (i, chunk) in chunks.into_iter().enumerate() {
                let file = format!("train-{i:05}.jsonl");
                write_jsonl(chunk, out.join(&file))?;
                manifest.output(file);
            }
        }
    }
    let stats = emission_stats(&records);
    write_json(&out.join(STATS_FILE), &stats)?;
    manifest.output(STATS_FILE);
    manifest.set("trajectories", items.len() as u64);
    manifest.set("records", stats.records as u64);
    manifest.set("free_form_records", stats.free_form_records as u64);
    manifest.set("assistant_turns", stats.assistant_turns as u64);
    log::info!("{} records from {} trajectories", stats.records, items.len());
    let failed = manifest.has_errors();
    manifest.write(out)?;
    Ok(if failed { Outcome::Partial } else { Outcome::Success })
}
