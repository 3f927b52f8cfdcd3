//! Scoring models on held-out environments: test-recommendation
//! precision/recall/F1 and diagnosis accuracy.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{strip_code_fence, ClinicalEnvironment, OracleBackend};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError, Purpose, RequestContext, SamplingParams, TeacherSpec};
use crate::graph::{KnowledgeGraph, Linker};
use crate::prompts::{JUDGE_DIAGNOSIS_PROMPT, MATCH_TESTS_PROMPT};
use crate::rollout::{materialize_paths, run_tree, RolloutConfig, RolloutError, RolloutRuntime, Trajectory};
use crate::text::{normalize, split_compound, SynonymTable};
use crate::turn::{dedup_tests, TestExtractor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("judge reply could not be parsed: {0}")]
    JudgeParseError(String),
    #[error("ground-truth test list is empty")]
    EmptyGroundTruth,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MatchReport {
    pub gt_covered: Vec<String>,
    pub gt_uncovered: Vec<String>,
    pub pred_used: Vec<String>,
    pub pred_unused: Vec<String>,
}

impl MatchReport {
    pub fn predicted_count(&self) -> usize {
        self.pred_used.len() + self.pred_unused.len()
    }

    pub fn ground_truth_count(&self) -> usize {
        self.gt_covered.len() + self.gt_uncovered.len()
    }

    /// `|pred_used| / |predicted|`; 0 with no predictions.
    pub fn precision(&self) -> f64 {
        ratio(self.pred_used.len(), self.predicted_count())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.gt_covered.len(), self.ground_truth_count())
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub enum MatchBackend<'a> {
    Deterministic(&'a SynonymTable),
    Chat {
        backend: &'a dyn ChatBackend,
        model_id: &'a str,
        params: SamplingParams,
    },
}

/// Does a predicted test cover a single ground-truth component? Equal
/// names after abbreviation expansion, or the prediction's tokens are a
/// subset of the component's (a parent covers its children).
pub fn covers(synonyms: &SynonymTable, predicted: &str, component: &str) -> bool {
    let p = synonyms.expanded_tokens(predicted);
    let g = synonyms.expanded_tokens(component);
    !p.is_empty() && p.is_subset(&g)
}

/// Deterministic matcher. A compound ground-truth item is one unit,
/// covered only when every component is. A prediction counts as used when
/// it covers part of some covered item.
pub fn match_tests_deterministic(predicted: &[String], ground_truth: &[String], synonyms: &SynonymTable) -> MatchReport {
    let predicted = dedup_tests(predicted.iter().cloned());
    let ground_truth = dedup_tests(ground_truth.iter().cloned());
    let mut used = vec![false; predicted.len()];
    let mut report = MatchReport::default();
    for gt in &ground_truth {
        let mut components = split_compound(gt);
        if components.is_empty() {
            components.push(gt.clone());
        }
        let coverers: Vec<Vec<usize>> = components
            .iter()
            .map(|c| (0..predicted.len()).filter(|&i| covers(synonyms, &predicted[i], c)).collect())
            .collect();
        if coverers.iter().all(|c| !c.is_empty()) {
            for i in coverers.into_iter().flatten() {
                used[i] = true;
            }
            report.gt_covered.push(gt.clone());
        } else {
            report.gt_uncovered.push(gt.clone());
        }
    }
    for (p, u) in predicted.into_iter().zip(used) {
        if u {
            report.pred_used.push(p);
        } else {
            report.pred_unused.push(p);
        }
    }
    report
}

#[derive(Deserialize)]
struct ChatMatch {
    #[serde(default)]
    gt_covered: Vec<String>,
    #[serde(default)]
    pred_used: Vec<String>,
}

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

pub fn match_tests(
    predicted: &[String],
    ground_truth: &[String],
    backend: &MatchBackend<'_>,
    ctx: &RequestContext,
) -> Result<MatchReport, EvalError> {
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    match backend {
        MatchBackend::Deterministic(syn) => Ok(match_tests_deterministic(predicted, ground_truth, syn)),
        MatchBackend::Chat {
            backend,
            model_id,
            params,
        } => {
            let predicted = dedup_tests(predicted.iter().cloned());
            let ground_truth = dedup_tests(ground_truth.iter().cloned());
            let user = format!(
                "PREDICTED:\n{}\n\nGROUND TRUTH:\n{}",
                bullet_list(&predicted),
                bullet_list(&ground_truth)
            );
            let req = ChatRequest::new(
                *model_id,
                vec![ChatMessage::system(MATCH_TESTS_PROMPT.trim_end()), ChatMessage::user(user)],
                *params,
            );
            let reply = backend.complete(&req, &ctx.clone().with_purpose(Purpose::MatchTests))?;
            let parsed: ChatMatch = serde_json::from_str(strip_code_fence(&reply))
                .map_err(|e| EvalError::JudgeParseError(e.to_string()))?;
            // Rebuild the partitions from the inputs so they stay exact.
            let covered: HashSet<String> = parsed.gt_covered.iter().map(|s| normalize(s)).collect();
            let used: HashSet<String> = parsed.pred_used.iter().map(|s| normalize(s)).collect();
            let (gt_covered, gt_uncovered) = ground_truth.into_iter().partition(|g| covered.contains(&normalize(g)));
            let (pred_used, pred_unused) = predicted.into_iter().partition(|p| used.contains(&normalize(p)));
            Ok(MatchReport {
                gt_covered,
                gt_uncovered,
                pred_used,
                pred_unused,
            })
        }
    }
}

pub enum JudgeBackend<'a> {
    /// Same disease-graph node after linking, or equal after normalization.
    Deterministic {
        graph: &'a KnowledgeGraph,
        linker: &'a Linker,
    },
    Chat {
        backend: &'a dyn ChatBackend,
        model_id: &'a str,
        params: SamplingParams,
    },
}

#[derive(Deserialize)]
struct ChatJudge {
    #[serde(rename = "match")]
    matched: bool,
}

pub fn judge_diagnosis(
    conclusion: &str,
    ground_truth: &str,
    backend: &JudgeBackend<'_>,
    ctx: &RequestContext,
) -> Result<bool, EvalError> {
    if conclusion.trim().is_empty() || ground_truth.trim().is_empty() {
        return Ok(false);
    }
    match backend {
        JudgeBackend::Deterministic { graph, linker } => {
            if normalize(conclusion) == normalize(ground_truth) {
                return Ok(true);
            }
            let a = linker.link(graph, conclusion).node_id;
            let b = linker.link(graph, ground_truth).node_id;
            Ok(a.is_some() && a == b)
        }
        JudgeBackend::Chat {
            backend,
            model_id,
            params,
        } => {
            let user = format!("Predicted Diagnosis: {conclusion}\nGround Truth Diagnosis: {ground_truth}");
            let req = ChatRequest::new(
                *model_id,
                vec![ChatMessage::system(JUDGE_DIAGNOSIS_PROMPT.trim_end()), ChatMessage::user(user)],
                *params,
            );
            let reply = backend.complete(&req, &ctx.clone().with_purpose(Purpose::JudgeDiagnosis))?;
            let parsed: ChatJudge = serde_json::from_str(strip_code_fence(&reply))
                .map_err(|e| EvalError::JudgeParseError(e.to_string()))?;
            Ok(parsed.matched)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub diagnosis_correct: bool,
    pub turns_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub t_max: u32,
    pub window_size: usize,
    pub sampling: SamplingParams,
    pub seed: u64,
    /// Average per-turn scores instead of scoring the union of all orders.
    pub per_turn: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let r = RolloutConfig::default();
        Self {
            t_max: r.t_max,
            window_size: r.window_size,
            sampling: r.sampling,
            seed: 0,
            per_turn: false,
        }
    }
}

impl EvalConfig {
    /// The single-path rollout configuration the harness runs.
    pub fn rollout_config(&self, model: &TeacherSpec) -> RolloutConfig {
        RolloutConfig {
            t_max: self.t_max,
            k_root: 1,
            branch_points: 0,
            window_size: self.window_size,
            free_form_ratio: 0.0,
            teachers: vec![model.clone()],
            seed: self.seed,
            sampling: self.sampling,
        }
    }
}

/// Scorers used by `run_case`.
pub struct Scorers<'a> {
    pub oracle: OracleBackend<'a>,
    pub extractor: TestExtractor<'a>,
    pub matcher: MatchBackend<'a>,
    pub judge: JudgeBackend<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub trajectory: Option<Trajectory>,
    pub predicted_tests: Vec<String>,
    pub conclusion: Option<String>,
    pub report: MatchReport,
    pub score: CaseScore,
}

/// Runs one model through one case, single path, no branching.
pub fn run_case(
    env: &ClinicalEnvironment,
    model: &TeacherSpec,
    backend: &dyn ChatBackend,
    scorers: &Scorers<'_>,
    config: &EvalConfig,
) -> Result<CaseResult, EvalError> {
    let ground_truth = env.reference_tests();
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let rollout = config.rollout_config(model);
    let runtime = RolloutRuntime {
        backends: vec![backend],
        oracle: scorers.oracle,
        extractor: scorers.extractor,
        jobs: 1,
    };
    let failed = |flag: &str, trajectory: Option<Trajectory>, turns: u32| {
        let report = MatchReport {
            gt_uncovered: ground_truth.clone(),
            ..Default::default()
        };
        CaseResult {
            predicted_tests: Vec::new(),
            conclusion: None,
            report,
            score: CaseScore {
                case_id: env.case_id.clone(),
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                diagnosis_correct: false,
                turns_used: turns,
                flags: vec![flag.to_owned()],
            },
            trajectory,
        }
    };
    let tree = match run_tree(env, &rollout, &runtime) {
        Ok(t) => t,
        Err(RolloutError::EmptyTree(_)) => return Ok(failed("terminal_failure", None, 0)),
        Err(e) => return Err(e.into()),
    };
    let (mut trajectories, _) = materialize_paths(&tree);
    let Some(traj) = trajectories.pop() else {
        return Ok(failed("terminal_failure", None, 0));
    };
    let turns = traj.len() as u32;
    if traj.ended_in_failure {
        return Ok(failed("terminal_failure", Some(traj), turns));
    }

    let ctx = RequestContext {
        case_id: env.case_id.clone(),
        branch_id: traj.node_path.clone(),
        turn_index: turns,
        ..Default::default()
    };
    let predicted = dedup_tests(traj.steps.iter().flat_map(|s| s.ordered_tests.iter().cloned()));
    let report = match_tests(&predicted, &ground_truth, &scorers.matcher, &ctx)?;
    let mut flags = Vec::new();
    if predicted.is_empty() {
        flags.push("no_tests_ordered".to_owned());
    }
    let (precision, recall, f) = if config.per_turn {
        let mut per = Vec::new();
        for step in traj.steps.iter().filter(|s| !s.ordered_tests.is_empty()) {
            let r = match_tests(&step.ordered_tests, &ground_truth, &scorers.matcher, &ctx)?;
            per.push((r.precision(), r.recall(), r.f1()));
        }
        let n = per.len().max(1) as f64;
        (
            per.iter().map(|p| p.0).sum::<f64>() / n,
            per.iter().map(|p| p.1).sum::<f64>() / n,
            per.iter().map(|p| p.2).sum::<f64>() / n,
        )
    } else {
        (report.precision(), report.recall(), report.f1())
    };
    let conclusion = traj.steps.last().map(|s| s.record.conclusion.clone());
    let diagnosis_correct = match &conclusion {
        Some(c) => judge_diagnosis(c, &env.ground_truth_diagnosis, &scorers.judge, &ctx)?,
        None => false,
    };
    Ok(CaseResult {
        predicted_tests: predicted,
        conclusion,
        report,
        score: CaseScore {
            case_id: env.case_id.clone(),
            precision,
            recall,
            f1: f,
            diagnosis_correct,
            turns_used: turns,
            flags,
        },
        trajectory: Some(traj),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub diagnosis_accuracy: f64,
}

pub fn summarize(scores: &[CaseScore]) -> RunSummary {
    let n = scores.len();
    if n == 0 {
        return RunSummary::default();
    }
    let mean = |f: &dyn Fn(&CaseScore) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
    RunSummary {
        cases: n,
        precision: mean(&|s| s.precision),
        recall: mean(&|s| s.recall),
        f1: mean(&|s| s.f1),
        diagnosis_accuracy: mean(&|s| if s.diagnosis_correct { 1.0 } else { 0.0 }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub model: String,
    pub runs: Vec<RunSummary>,
    pub mean: RunSummary,
    /// Sample standard deviation across repeats; 0 for a single run.
    pub std: RunSummary,
}

/// Case-level means per repeat, then mean and spread across repeats.
pub fn aggregate(model: &str, runs: &[Vec<CaseScore>]) -> EvalReport {
    let summaries: Vec<RunSummary> = runs.iter().map(|r| summarize(r)).collect();
    let k = summaries.len();
    let stat = |f: &dyn Fn(&RunSummary) -> f64| {
        if k == 0 {
            return (0.0, 0.0);
        }
        let xs: Vec<f64> = summaries.iter().map(f).collect();
        let m = xs.iter().sum::<f64>() / k as f64;
        let var = if k > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    let (p, ps) = stat(&|s| s.precision);
    let (r, rs) = stat(&|s| s.recall);
    let (f, fs) = stat(&|s| s.f1);
    let (d, ds) = stat(&|s| s.diagnosis_accuracy);
    let cases = summaries.first().map(|s| s.cases).unwrap_or(0);
    EvalReport {
        model: model.to_owned(),
        mean: RunSummary {
            cases,
            precision: p,
            recall: r,
            f1: f,
            diagnosis_accuracy: d,
        },
        std: RunSummary {
            cases,
            precision: ps,
            recall: rs,
            f1: fs,
            diagnosis_accuracy: ds,
        },
        runs: summaries,
    }
}

/// Plain-text table with Prec / Rec / F1 / Diag Acc columns.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>15}  {:>15}  {:>15}  {:>15}\n",
        "Model", "Prec", "Rec", "F1", "Diag Acc"
    );
    for r in reports {
        let cell = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
        out.push_str(&format!(
            "{:<width$}  {:>15}  {:>15}  {:>15}  {:>15}\n",
            r.model,
            cell(r.mean.precision, r.std.precision),
            cell(r.mean.recall, r.std.recall),
            cell(r.mean.f1, r.std.f1),
            cell(r.mean.diagnosis_accuracy, r.std.diagnosis_accuracy),
        ));
    }
    out
}
