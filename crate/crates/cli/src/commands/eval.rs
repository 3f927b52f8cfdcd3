//! Single-path evaluation with repeats.

use std::path::Path;

use anyhow::Context as _;
use dxdistill::environment::{MenuMatcher, OracleBackend};
use dxdistill::eval::{aggregate, render_table, run_case, CaseScore, EvalReport, JudgeBackend, MatchBackend, Scorers};
use dxdistill::gateway::TeacherSpec;
use dxdistill::graph::{KnowledgeGraph, Linker};
use dxdistill::text::{SynonymTable, TermMatcher};
use dxdistill::turn::TestExtractor;
use dxdistill::ClinicalEnvironment;
use serde::Serialize;

use super::{aux_params, create_dir, load_cases, require_dir, write_json};
use crate::backends::{aux_spec, Gateway};
use crate::manifest::ManifestBuilder;
use crate::pool::par_map;
use crate::{Context, Outcome, Usage};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";

pub struct EvalArgs<'a> {
    pub cases: &'a Path,
    pub model: &'a str,
    pub model_id: Option<&'a str>,
    pub out: &'a Path,
    pub repeats: u32,
    pub disease_graph: Option<&'a Path>,
    pub match_model: Option<&'a str>,
    pub judge_model: Option<&'a str>,
    pub oracle_model: Option<&'a str>,
}

#[derive(Serialize)]
struct RepeatScores {
    seed: u64,
    cases: Vec<CaseScore>,
}

#[derive(Serialize)]
struct Report<'a> {
    report: &'a EvalReport,
    repeats: Vec<RepeatScores>,
}

fn model_spec(ctx: &Context, label: &str, model_id: Option<&str>) -> anyhow::Result<TeacherSpec> {
    let known = ctx.config.rollout.teachers.iter().find(|t| t.label == label);
    match (known, model_id) {
        (Some(t), None) => Ok(t.clone()),
        (Some(t), Some(id)) => Ok(TeacherSpec {
            model_id: id.to_owned(),
            ..t.clone()
        }),
        (None, Some(id)) => Ok(aux_spec(label, id)),
        (None, None) => Err(Usage(format!("model {label:?} is not in the config; pass --model-id")).into()),
    }
}

pub fn run(ctx: &Context, args: &EvalArgs<'_>) -> anyhow::Result<Outcome> {
    let envs: Vec<ClinicalEnvironment> = load_cases(args.cases)?.into_values().collect();
    let spec = model_spec(ctx, args.model, args.model_id)?;
    let graph = match (args.disease_graph, args.judge_model) {
        (_, Some(_)) => None,
        (Some(dir), None) => {
            require_dir(dir, "disease graph")?;
            Some(
                KnowledgeGraph::load_dir("disease graph", dir)
                    .with_context(|| format!("loading disease graph from {}", dir.display()))?,
            )
        }
        (None, None) => {
            return Err(Usage("the diagnosis judge needs --disease-graph or --judge-model".into()).into());
        }
    };
    let gateway = Gateway::from_config(&ctx.config)?;
    let backend = gateway.backend_for(&spec)?;
    let aux = |label: &str, model: Option<&str>| model.map(|m| gateway.backend_for(&aux_spec(label, m))).transpose();
    let match_backend = aux("matcher", args.match_model)?;
    let judge_backend = aux("judge", args.judge_model)?;
    let oracle_backend = aux("oracle", args.oracle_model)?;

    let menu = MenuMatcher {
        terms: TermMatcher::default(),
        threshold: ctx.config.oracle_match_threshold,
    };
    let synonyms = SynonymTable::default();
    let linker = Linker::with_threshold(ctx.config.link_threshold);
    let scorers = Scorers {
        oracle: match (&oracle_backend, args.oracle_model) {
            (Some(b), Some(model_id)) => OracleBackend::Chat {
                backend: b.as_ref(),
                model_id,
                params: aux_params(),
                matcher: &menu,
            },
            _ => OracleBackend::Deterministic(&menu),
        },
        extractor: TestExtractor::default(),
        matcher: match (&match_backend, args.match_model) {
            (Some(b), Some(model_id)) => MatchBackend::Chat {
                backend: b.as_ref(),
                model_id,
                params: aux_params(),
            },
            _ => MatchBackend::Deterministic(&synonyms),
        },
        judge: match (&judge_backend, args.judge_model, &graph) {
            (Some(b), Some(model_id), _) => JudgeBackend::Chat {
                backend: b.as_ref(),
                model_id,
                params: aux_params(),
            },
            (_, _, Some(graph)) => JudgeBackend::Deterministic { graph, linker: &linker },
            _ => unreachable!("judge checked above"),
        },
    };
    create_dir(args.out)?;

    let mut manifest = ManifestBuilder::new("eval", ctx.config_path.as_deref(), &ctx.config, ctx.config.eval.seed, ctx.deterministic);
    manifest.input("cases", args.cases);
    if let Some(dir) = args.disease_graph {
        manifest.input("disease_graph", dir);
    }
    let mut runs = Vec::new();
    let mut repeats = Vec::new();
    for i in 0..args.repeats {
        let config = dxdistill::eval::EvalConfig {
            seed: ctx.config.eval.seed + u64::from(i),
            ..ctx.config.eval.clone()
        };
        let results = par_map(&envs, ctx.jobs, |env| run_case(env, &spec, backend.as_ref(), &scorers, &config));
        let mut scores = Vec::new();
        for (env, r) in envs.iter().zip(results) {
            match r {
                Ok(r) => scores.push(r.score),
                Err(e) => manifest.error(format!("repeat {i}, {}: {e}", env.case_id)),
            }
        }
        manifest.count("scored", scores.len() as u64);
        runs.push(scores.clone());
        repeats.push(RepeatScores {
            seed: config.seed,
            cases: scores,
        });
    }
    let report = aggregate(args.model, &runs);
    let table = render_table(std::slice::from_ref(&report));
    write_json(
        &args.out.join(REPORT_FILE),
        &Report {
            report: &report,
            repeats,
        },
    )?;
    std::fs::write(args.out.join(TABLE_FILE), &table)?;
    manifest.output(REPORT_FILE);
    manifest.output(TABLE_FILE);
    manifest.set("cases", envs.len() as u64);
    manifest.set("repeats", u64::from(args.repeats));
    print!("{table}");
    let failed = manifest.has_errors();
    manifest.write(args.out)?;
    Ok(if failed { Outcome::Partial } else { Outcome::Success })
}
