#![allow(dead_code)]

use std::path::PathBuf;

use dxdistill::environment::{load_corpus, MenuMatcher, OracleBackend};
use dxdistill::gateway::ScriptedBackend;
use dxdistill::rollout::{run_tree, RolloutRuntime, Trajectory, TrajectoryStep, TrajectoryTree};
use dxdistill::turn::{parse_turn_reply, TestExtractor, TurnMode};
use dxdistill::{ClinicalEnvironment, KnowledgeGraph, RunConfig};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus() -> Vec<ClinicalEnvironment> {
    load_corpus(fixtures().join("cases")).expect("toy corpus loads")
}

pub fn case(id: &str) -> ClinicalEnvironment {
    corpus().into_iter().find(|c| c.case_id == id).expect("case exists")
}

pub fn disease_graph() -> KnowledgeGraph {
    KnowledgeGraph::load_dir("disease", fixtures().join("graphs/disease")).unwrap()
}

pub fn test_graph() -> KnowledgeGraph {
    KnowledgeGraph::load_dir("test_disease", fixtures().join("graphs/test_disease")).unwrap()
}

pub fn toy_config() -> RunConfig {
    RunConfig::load(fixtures().join("configs/toy_run.json")).unwrap()
}

pub fn teacher_script() -> ScriptedBackend {
    ScriptedBackend::load(fixtures().join("scripts/toy_teacher.txt")).unwrap()
}

pub fn grow(env: &ClinicalEnvironment, config: &RunConfig, backend: &ScriptedBackend, jobs: usize) -> TrajectoryTree {
    let matcher = MenuMatcher::default();
    let runtime = RolloutRuntime {
        backends: vec![backend],
        oracle: OracleBackend::Deterministic(&matcher),
        extractor: TestExtractor::default(),
        jobs,
    };
    run_tree(env, &config.rollout, &runtime).expect("tree grows")
}

/// A well-formed structured reply.
pub fn reply(ddx: &[&str], tests: &[&str], status: &str) -> String {
    let conclusion = ddx.first().copied().unwrap_or("unclear");
    let ddx: Vec<String> = ddx.iter().enumerate().map(|(i, d)| format!("{}. {d} - fits", i + 1)).collect();
    let tests: Vec<String> = tests.iter().enumerate().map(|(i, t)| format!("{}. {t} - check", i + 1)).collect();
    format!(
        "### Chain of Thought:\n<step 1> reasoning\n\n### DDx List:\n{}\n\n### Pivot:\nnext question\n\n\
         ### Primary Actions:\n{}\n\n### Additional Information Required:\nNot required.\n\n\
         ### Diagnostic Status:\n{status}\n\n### Conclusion:\n{}",
        ddx.join("\n"),
        if tests.is_empty() { "None".to_owned() } else { tests.join("\n") },
        conclusion,
    )
}

/// A hand-built trajectory: one (differential, ordered tests) pair per turn.
pub fn synthetic(case_id: &str, turns: &[(&[&str], &[&str])]) -> Trajectory {
    let steps = turns
        .iter()
        .enumerate()
        .map(|(i, (ddx, tests))| {
            let status = if i + 1 == turns.len() { "DONE" } else { "CONTINUE" };
            let mut record = parse_turn_reply(&reply(ddx, tests, status), TurnMode::Structured).unwrap();
            record.turn_index = i as u32 + 1;
            TrajectoryStep {
                node_id: format!("syn.r0.t{}", i + 1),
                teacher_label: "syn".into(),
                record,
                ordered_tests: tests.iter().map(|t| t.to_string()).collect(),
                oracle_answers: Vec::new(),
            }
        })
        .collect::<Vec<_>>();
    Trajectory {
        case_id: case_id.into(),
        node_path: steps.iter().map(|s| s.node_id.clone()).collect::<Vec<_>>().join("/"),
        teacher_label: "syn".into(),
        mode: TurnMode::Structured,
        steps,
        ended_in_failure: false,
    }
}
