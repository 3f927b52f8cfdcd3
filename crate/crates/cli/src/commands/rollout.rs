//! One resumable tree store per case.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context as _;
use dxdistill::environment::{MenuMatcher, OracleBackend};
use dxdistill::gateway::ChatBackend;
use dxdistill::rollout::{materialize_paths, run_tree_with_store, RolloutRuntime};
use dxdistill::text::TermMatcher;
use dxdistill::turn::TestExtractor;

use super::{aux_params, create_dir, load_cases};
use crate::backends::{aux_spec, Gateway};
use crate::manifest::ManifestBuilder;
use crate::{Context, Outcome, Usage};

pub fn run(
    ctx: &Context,
    cases: &Path,
    out: &Path,
    oracle_model: Option<&str>,
    extract_model: Option<&str>,
) -> anyhow::Result<Outcome> {
    let config = &ctx.config.rollout;
    config.validate().map_err(|e| Usage(e.to_string()))?;
    let envs = load_cases(cases)?;
    let gateway = Gateway::from_config(&ctx.config)?;
    let teachers: Vec<Arc<dyn ChatBackend>> = config
        .teachers
        .iter()
        .map(|t| gateway.backend_for(t))
        .collect::<anyhow::Result<_>>()?;
    let oracle_backend = oracle_model
        .map(|m| gateway.backend_for(&aux_spec("oracle", m)))
        .transpose()?;
    let extract_backend = extract_model
        .map(|m| gateway.backend_for(&aux_spec("extract", m)))
        .transpose()?;
    let matcher = MenuMatcher {
        terms: TermMatcher::default(),
        threshold: ctx.config.oracle_match_threshold,
    };
    let runtime = RolloutRuntime {
        backends: teachers.iter().map(|b| b.as_ref()).collect(),
        oracle: match (&oracle_backend, oracle_model) {
            (Some(b), Some(model_id)) => OracleBackend::Chat {
                backend: b.as_ref(),
                model_id,
                params: aux_params(),
                matcher: &matcher,
            },
            _ => OracleBackend::Deterministic(&matcher),
        },
        extractor: match (&extract_backend, extract_model) {
            (Some(b), Some(model_id)) => TestExtractor::Chat {
                backend: b.as_ref(),
                model_id,
                params: aux_params(),
            },
            _ => TestExtractor::Deterministic {
                include_additional: ctx.config.filter.actions_include_additional,
            },
        },
        jobs: ctx.jobs,
    };
    create_dir(out)?;

    let mut manifest = ManifestBuilder::new("rollout", ctx.config_path.as_deref(), &ctx.config, ctx.seed, ctx.deterministic);
    manifest.input("cases", cases);
    for (id, env) in &envs {
        let file = format!("{id}.jsonl");
        let store = out.join(&file);
        match run_tree_with_store(env, config, &runtime, &store).with_context(|| format!("case {id}")) {
            Err(e) => manifest.error(format!("{e:#}")),
            Ok(tree) => {
                let (_, stats) = materialize_paths(&tree);
                let failed_nodes = tree.nodes.iter().filter(|n| n.failure.is_some()).count();
                manifest.count("cases", 1);
                manifest.count("nodes", tree.nodes.len() as u64);
                manifest.count("failed_nodes", failed_nodes as u64);
                manifest.count("trajectories", stats.trajectories as u64);
                manifest.count("failed_roots", stats.failed_roots as u64);
                manifest.count("failed_paths", stats.failed_paths as u64);
                log::info!("{id}: {} nodes, {} trajectories", tree.nodes.len(), stats.trajectories);
            }
        }
        if store.exists() {
            manifest.output(file);
        }
    }
    let failed = manifest.has_errors();
    manifest.write(out)?;
    Ok(if failed { Outcome::Partial } else { Outcome::Success })
}
