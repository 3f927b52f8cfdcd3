mod common;

use common::*;
use dxdistill::environment::{MenuMatcher, OracleBackend};
use dxdistill::eval::{
    aggregate, judge_diagnosis, match_tests, run_case, CaseScore, EvalConfig, EvalError, JudgeBackend, MatchBackend,
    MatchReport, Scorers,
};
use dxdistill::gateway::{ChatBackend, ChatRequest, GatewayError, RequestContext, ScriptedBackend, TeacherSpec};
use dxdistill::graph::{KnowledgeGraph, Linker};
use dxdistill::rollout::materialize_paths;
use dxdistill::text::SynonymTable;
use dxdistill::turn::TestExtractor;
use dxdistill::ClinicalEnvironment;

/// Canonical disease names for each toy case's answer.
fn answer(case_id: &str) -> &'static str {
    match case_id {
        "toy_anemia" => "Iron deficiency anemia",
        "toy_thyroid" => "Hashimoto thyroiditis",
        "toy_pe" => "Pulmonary embolism",
        other => panic!("unknown case {other}"),
    }
}

struct Kit {
    matcher: MenuMatcher,
    synonyms: SynonymTable,
    graph: KnowledgeGraph,
    linker: Linker,
}

impl Kit {
    fn new() -> Self {
        Self {
            matcher: MenuMatcher::default(),
            synonyms: SynonymTable::default(),
            graph: disease_graph(),
            linker: Linker::default(),
        }
    }

    fn scorers(&self) -> Scorers<'_> {
        Scorers {
            oracle: OracleBackend::Deterministic(&self.matcher),
            extractor: TestExtractor::default(),
            matcher: MatchBackend::Deterministic(&self.synonyms),
            judge: JudgeBackend::Deterministic {
                graph: &self.graph,
                linker: &self.linker,
            },
        }
    }
}

fn score_all(backend: &dyn ChatBackend, config: &EvalConfig) -> Vec<CaseScore> {
    let kit = Kit::new();
    let model = TeacherSpec::scripted("model");
    corpus()
        .iter()
        .map(|c| run_case(c, &model, backend, &kit.scorers(), config).unwrap().score)
        .collect()
}

fn perfect_agent(env: &ClinicalEnvironment) -> impl Fn(&ChatRequest, &RequestContext) -> Result<String, GatewayError> {
    let tests = env.reference_tests();
    let diagnosis = answer(&env.case_id);
    move |_, ctx| {
        Ok(if ctx.turn_index == 1 {
            let t: Vec<&str> = tests.iter().map(String::as_str).collect();
            reply(&["Undifferentiated illness"], &t, "CONTINUE")
        } else {
            reply(&[diagnosis], &[], "DONE")
        })
    }
}

#[test]
fn perfect_agent_scores_one_everywhere() {
    let kit = Kit::new();
    let model = TeacherSpec::scripted("model");
    for c in corpus() {
        let agent = perfect_agent(&c);
        let r = run_case(&c, &model, &agent, &kit.scorers(), &EvalConfig::default()).unwrap();
        assert_eq!((r.score.precision, r.score.recall, r.score.f1), (1.0, 1.0, 1.0), "{}", c.case_id);
        assert!(r.score.diagnosis_correct);
        assert_eq!(r.score.turns_used, 2);
        assert!(r.score.flags.is_empty());
    }
}

#[test]
fn agent_ordering_only_unavailable_tests_has_zero_recall() {
    let script = ScriptedBackend::load(fixtures().join("scripts/unavailable_agent.txt")).unwrap();
    let kit = Kit::new();
    let model = TeacherSpec::scripted("teacher_u");
    for c in corpus() {
        let r = run_case(&c, &model, &script, &kit.scorers(), &EvalConfig::default()).unwrap();
        assert_eq!(r.score.recall, 0.0, "{}", c.case_id);
        assert_eq!(r.score.precision, 0.0);
        assert!(!r.predicted_tests.is_empty());
        let traj = r.trajectory.unwrap();
        assert!(traj.steps[0].oracle_answers.iter().all(|a| !a.is_available()));
    }
}

#[test]
fn never_done_runs_to_the_turn_budget() {
    let agent = |_: &ChatRequest, ctx: &RequestContext| -> Result<String, GatewayError> {
        Ok(reply(&["Anemia"], &[&format!("Panel {}", ctx.turn_index)], "CONTINUE"))
    };
    let scores = score_all(&agent, &EvalConfig::default());
    assert!(scores.iter().all(|s| s.turns_used == 8));
}

#[test]
fn no_orders_scores_zero_and_is_flagged() {
    let agent = |_: &ChatRequest, _: &RequestContext| -> Result<String, GatewayError> {
        Ok(reply(&["Iron deficiency anemia"], &[], "DONE"))
    };
    let scores = score_all(&agent, &EvalConfig::default());
    for s in &scores {
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(s.flags, vec!["no_tests_ordered"]);
        assert_eq!(s.turns_used, 1);
    }
    assert!(scores.iter().find(|s| s.case_id == "toy_anemia").unwrap().diagnosis_correct);
}

#[test]
fn unparseable_first_turn_is_a_terminal_failure() {
    let agent = |_: &ChatRequest, _: &RequestContext| -> Result<String, GatewayError> { Ok("no idea".into()) };
    for s in score_all(&agent, &EvalConfig::default()) {
        assert_eq!(s.flags, vec!["terminal_failure"]);
        assert_eq!(s.turns_used, 0);
        assert!(!s.diagnosis_correct);
    }
}

#[test]
fn repeated_deterministic_runs_have_zero_spread() {
    let script = teacher_script();
    let config = EvalConfig {
        seed: 7,
        ..Default::default()
    };
    let model = TeacherSpec::scripted("teacher_a");
    let kit = Kit::new();
    let runs: Vec<Vec<CaseScore>> = (0..3)
        .map(|_| {
            corpus()
                .iter()
                .map(|c| run_case(c, &model, &script, &kit.scorers(), &config).unwrap().score)
                .collect()
        })
        .collect();
    let rep = aggregate("teacher_a", &runs);
    assert_eq!(rep.runs.len(), 3);
    assert_eq!(rep.std.precision, 0.0);
    assert_eq!(rep.std.recall, 0.0);
    assert_eq!(rep.std.f1, 0.0);
    assert_eq!(rep.std.diagnosis_accuracy, 0.0);
}

#[test]
fn evaluation_path_matches_the_first_distillation_root() {
    let script = teacher_script();
    let mut config = toy_config();
    config.rollout.free_form_ratio = 0.0;
    let kit = Kit::new();
    let model = config.rollout.teachers[0].clone();
    let eval = EvalConfig {
        seed: config.rollout.seed,
        ..Default::default()
    };
    for c in corpus() {
        let r = run_case(&c, &model, &script, &kit.scorers(), &eval).unwrap();
        let tree = grow(&c, &config, &script, 1);
        let (trajs, _) = materialize_paths(&tree);
        let root = trajs
            .iter()
            .find(|t| t.node_path.starts_with("teacher_a.r0.t1") && !t.node_path.contains(".b"))
            .expect("first root completed");
        assert_eq!(r.trajectory.as_ref().unwrap().steps, root.steps, "{}", c.case_id);
    }
}

#[test]
fn per_turn_scores_average_over_ordering_turns() {
    let env = case("toy_anemia");
    let agent = |_: &ChatRequest, ctx: &RequestContext| -> Result<String, GatewayError> {
        Ok(match ctx.turn_index {
            1 => reply(&["Anemia"], &["Complete Blood Count (CBC)", "Bone marrow biopsy"], "CONTINUE"),
            _ => reply(&["Iron deficiency anemia"], &["Colonoscopy"], "DONE"),
        })
    };
    let kit = Kit::new();
    let model = TeacherSpec::scripted("model");
    let union = run_case(&env, &model, &agent, &kit.scorers(), &EvalConfig::default()).unwrap();
    // Union: 2 of 3 predictions used; 2 of 6 reference tests covered.
    assert!((union.score.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((union.score.recall - 2.0 / 6.0).abs() < 1e-12);
    let per = run_case(
        &env,
        &model,
        &agent,
        &kit.scorers(),
        &EvalConfig {
            per_turn: true,
            ..Default::default()
        },
    )
    .unwrap();
    // Turn 1: P 1/2, R 1/6. Turn 2: P 1, R 1/6.
    assert!((per.score.precision - 0.75).abs() < 1e-12);
    assert!((per.score.recall - 1.0 / 6.0).abs() < 1e-12);
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

#[test]
fn chat_matcher_partitions_come_from_the_inputs() {
    let judge = |_: &ChatRequest, ctx: &RequestContext| -> Result<String, GatewayError> {
        assert_eq!(ctx.purpose, dxdistill::gateway::Purpose::MatchTests);
        Ok("```json\n{\"gt_covered\": [\"complete blood count\", \"invented\"], \"pred_used\": [\"CBC\"]}\n```".into())
    };
    let backend = MatchBackend::Chat {
        backend: &judge,
        model_id: "judge",
        params: Default::default(),
    };
    let r = match_tests(
        &s(&["CBC", "MRI"]),
        &s(&["Complete Blood Count", "Ferritin"]),
        &backend,
        &RequestContext::default(),
    )
    .unwrap();
    assert_eq!(
        r,
        MatchReport {
            gt_covered: s(&["Complete Blood Count"]),
            gt_uncovered: s(&["Ferritin"]),
            pred_used: s(&["CBC"]),
            pred_unused: s(&["MRI"]),
        }
    );
    assert!(matches!(
        match_tests(&s(&["CBC"]), &[], &backend, &RequestContext::default()),
        Err(EvalError::EmptyGroundTruth)
    ));
}

#[test]
fn judges() {
    let graph = disease_graph();
    let linker = Linker::default();
    let det = JudgeBackend::Deterministic {
        graph: &graph,
        linker: &linker,
    };
    let ctx = RequestContext::default();
    let gt = "Sideropenic anemia from occult colonic blood loss";
    assert!(judge_diagnosis("Iron deficiency anemia", gt, &det, &ctx).unwrap());
    assert!(judge_diagnosis("iron-deficiency anaemia", gt, &det, &ctx).unwrap());
    assert!(!judge_diagnosis("Anemia of chronic disease", gt, &det, &ctx).unwrap());
    assert!(!judge_diagnosis("", gt, &det, &ctx).unwrap());
    assert!(judge_diagnosis("Some rare thing", "some rare thing", &det, &ctx).unwrap());

    let yes = |_: &ChatRequest, _: &RequestContext| -> Result<String, GatewayError> { Ok("{\"match\": true}".into()) };
    let garbled = |_: &ChatRequest, _: &RequestContext| -> Result<String, GatewayError> { Ok("yes".into()) };
    let chat = |b: &'static dyn ChatBackend| JudgeBackend::Chat {
        backend: b,
        model_id: "judge",
        params: Default::default(),
    };
    let yes: &'static dyn ChatBackend = Box::leak(Box::new(yes));
    let garbled: &'static dyn ChatBackend = Box::leak(Box::new(garbled));
    assert!(judge_diagnosis("IDA", gt, &chat(yes), &ctx).unwrap());
    assert!(matches!(
        judge_diagnosis("IDA", gt, &chat(garbled), &ctx),
        Err(EvalError::JudgeParseError(_))
    ));
}
