//! Stores in, scored and pruned trajectories out.

use std::io::Write as _;
use std::path::Path;

use anyhow::Context as _;
use dxdistill::filter::{filter_trajectory, retention_stats, FilterConfig, MetricSeries, RetentionStats};
use dxdistill::graph::{KnowledgeGraph, Linker};
use dxdistill::rollout::{materialize_paths, read_store, MaterializeStats, TrajectoryTree};
use dxdistill::{FilterOutcome, Trajectory};
use serde::{Deserialize, Serialize};

use super::{create_dir, files_with_ext, load_cases, require_dir, write_json};
use crate::manifest::ManifestBuilder;
use crate::{Context, Outcome};

pub const REPORT_FILE: &str = "report.json";
pub const FILTERED_FILE: &str = "filtered.jsonl";

/// One line of `filtered.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FilteredTrajectory {
    pub trajectory: Trajectory,
    pub outcome: FilterOutcome,
}

#[derive(Debug, Serialize)]
struct TrajectoryReport<'a> {
    case_id: &'a str,
    node_path: &'a str,
    outcome: &'a FilterOutcome,
    metrics: &'a MetricSeries,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    filter: &'a FilterConfig,
    retention: RetentionStats,
    materialize: MaterializeStats,
    /// Stores that could not be scored, with the reason.
    skipped: Vec<String>,
    trajectories: Vec<TrajectoryReport<'a>>,
}

fn load_graph(name: &str, dir: &Path) -> anyhow::Result<KnowledgeGraph> {
    require_dir(dir, name)?;
    KnowledgeGraph::load_dir(name, dir).with_context(|| format!("loading {name} from {}", dir.display()))
}

pub fn run(
    ctx: &Context,
    stores: &Path,
    cases: &Path,
    disease_graph: &Path,
    test_graph: &Path,
    out: &Path,
) -> anyhow::Result<Outcome> {
    require_dir(stores, "store directory")?;
    let envs = load_cases(cases)?;
    let dg = load_graph("disease graph", disease_graph)?;
    let tg = load_graph("test graph", test_graph)?;
    let linker = Linker::with_threshold(ctx.config.link_threshold);
    let config = &ctx.config.filter;
    create_dir(out)?;

    let mut manifest = ManifestBuilder::new("filter", ctx.config_path.as_deref(), &ctx.config, ctx.seed, ctx.deterministic);
    manifest
        .input("stores", stores)
        .input("cases", cases)
        .input("disease_graph", disease_graph)
        .input("test_graph", test_graph);

    let mut materialize = MaterializeStats::default();
    let mut skipped = Vec::new();
    let mut scored: Vec<(Trajectory, MetricSeries, FilterOutcome)> = Vec::new();
    for store in files_with_ext(stores, "jsonl")? {
        let name = store.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let (nodes, torn) = read_store(&store).with_context(|| format!("reading {name}"))?;
        if torn {
            log::warn!("{name}: ignoring a torn last line");
        }
        let Some(case_id) = nodes.first().map(|n| n.case_id.clone()) else {
            continue;
        };
        let Some(env) = envs.get(&case_id) else {
            skipped.push(format!("{name}: no case {case_id:?} in {}", cases.display()));
            continue;
        };
        let tree = TrajectoryTree {
            case_id,
            nodes,
            config: ctx.config.rollout.clone(),
        };
        let (trajs, stats) = materialize_paths(&tree);
        materialize.trajectories += stats.trajectories;
        materialize.failed_roots += stats.failed_roots;
        materialize.failed_paths += stats.failed_paths;
        for traj in trajs {
            match filter_trajectory(&traj, env, &dg, &tg, &linker, config) {
                Ok((series, outcome)) => scored.push((traj, series, outcome)),
                Err(e) => manifest.error(format!("{}:{}: {e}", traj.case_id, traj.node_path)),
            }
        }
    }
    scored.sort_by(|a, b| (&a.0.case_id, &a.0.node_path).cmp(&(&b.0.case_id, &b.0.node_path)));
    for s in &skipped {
        manifest.error(s.clone());
    }

    let retention = retention_stats(scored.iter().map(|(_, _, o)| o));
    let mut lines = std::io::BufWriter::new(std::fs::File::create(out.join(FILTERED_FILE))?);
    for (traj, _, outcome) in &scored {
        let line = serde_json::to_string(&FilteredTrajectory {
            trajectory: traj.clone(),
            outcome: outcome.clone(),
        })?;
        writeln!(lines, "{line}")?;
    }
    lines.flush()?;
    manifest.output(FILTERED_FILE);

    let report = Report {
        filter: config,
        retention: retention.clone(),
        materialize,
        skipped,
        trajectories: scored
            .iter()
            .map(|(t, m, o)| TrajectoryReport {
                case_id: &t.case_id,
                node_path: &t.node_path,
                outcome: o,
                metrics: m,
            })
            .collect(),
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    manifest.output(REPORT_FILE);

    manifest.set("trajectories", retention.trajectories as u64);
    manifest.set("kept_full", retention.kept_full as u64);
    manifest.set("kept_truncated", retention.kept_truncated as u64);
    manifest.set("discarded", retention.discarded as u64);
    log::info!(
        "{} trajectories: {} kept whole, {} truncated, {} discarded",
        retention.trajectories,
        retention.kept_full,
        retention.kept_truncated,
        retention.discarded
    );
    let failed = manifest.has_errors();
    manifest.write(out)?;
    Ok(if failed { Outcome::Partial } else { Outcome::Success })
}
