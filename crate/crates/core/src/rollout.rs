//! Multi-turn agent/environment interaction and tree-structured sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{query_oracle, ClinicalEnvironment, OracleAnswer, OracleBackend};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, RequestContext, SamplingParams, TeacherSpec};
use crate::prompts::{render_oracle_results, render_turn_prompt, HistoryTurn, Prompt, FORMAT_REMINDER};
use crate::text::normalize;
use crate::turn::{extract_tests, parse_turn_reply, TestExtractor, TurnMode, TurnRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub t_max: u32,
    pub k_root: u32,
    pub branch_points: u32,
    pub window_size: usize,
    pub free_form_ratio: f64,
    pub teachers: Vec<TeacherSpec>,
    pub seed: u64,
    pub sampling: SamplingParams,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            t_max: 8,
            k_root: 3,
            branch_points: 1,
            window_size: 2,
            free_form_ratio: 0.10,
            teachers: Vec::new(),
            seed: 0,
            sampling: SamplingParams::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let bad = |m: &str| Err(RolloutError::InvalidConfig(m.to_owned()));
        if self.t_max < 1 {
            return bad("t_max must be at least 1");
        }
        if self.k_root < 1 {
            return bad("k_root must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.free_form_ratio) {
            return bad("free_form_ratio must lie in [0, 1]");
        }
        if self.teachers.is_empty() {
            return bad("at least one teacher is required");
        }
        let mut labels = HashSet::new();
        for t in &self.teachers {
            if t.label.is_empty() || t.label.contains(['.', '/']) {
                return bad("teacher labels must be non-empty and contain no '.' or '/'");
            }
            if !labels.insert(&t.label) {
                return bad("duplicate teacher label");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    InvalidConfig(String),
    #[error("every root turn failed for case {0}")]
    EmptyTree(String),
    #[error("trajectory store {path}: {source}")]
    Store {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Root,
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnFailure {
    /// `gateway`, `parse`, `extraction` or `oracle`.
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryNode {
    pub node_id: String,
    pub parent_id: Option<String>,
    pub case_id: String,
    pub teacher_label: String,
    pub branch_tag: String,
    pub phase: Phase,
    pub path_index: u32,
    pub turn_index: u32,
    pub mode: TurnMode,
    pub turn: Option<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<TurnFailure>,
    /// Tests this turn newly ordered, after dropping repeats along the path.
    pub ordered_tests: Vec<String>,
    pub oracle_answers: Vec<OracleAnswer>,
}

impl TrajectoryNode {
    /// True when no further turn follows on this path.
    pub fn is_terminal(&self, t_max: u32) -> bool {
        match &self.turn {
            None => true,
            Some(t) => t.is_done() || self.turn_index >= t_max,
        }
    }

    fn sort_key(&self) -> (Phase, u32, u32) {
        (self.phase, self.path_index, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTree {
    pub case_id: String,
    pub nodes: Vec<TrajectoryNode>,
    pub config: RolloutConfig,
}

impl TrajectoryTree {
    pub fn node(&self, id: &str) -> Option<&TrajectoryNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a TrajectoryNode> + 'a {
        self.nodes.iter().filter(move |n| n.parent_id.as_deref() == Some(id))
    }

    pub fn leaves(&self) -> Vec<&TrajectoryNode> {
        let parents: HashSet<&str> = self.nodes.iter().filter_map(|n| n.parent_id.as_deref()).collect();
        self.nodes.iter().filter(|n| !parents.contains(n.node_id.as_str())).collect()
    }

    /// Root-to-node path.
    pub fn path_to(&self, id: &str) -> Vec<&TrajectoryNode> {
        let by_id: BTreeMap<&str, &TrajectoryNode> = self.nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
        let mut path = Vec::new();
        let mut cur = by_id.get(id).copied();
        while let Some(n) = cur {
            path.push(n);
            cur = n.parent_id.as_deref().and_then(|p| by_id.get(p).copied());
        }
        path.reverse();
        path
    }

    pub fn to_jsonl(&self) -> String {
        nodes_to_jsonl(&self.nodes)
    }
}

/// A teacher model bound to the backend that serves it.
#[derive(Clone, Copy)]
pub struct Teacher<'a> {
    pub spec: &'a TeacherSpec,
    pub backend: &'a dyn ChatBackend,
}

/// Everything a rollout needs besides the case and config.
pub struct RolloutRuntime<'a> {
    /// One backend per entry of `RolloutConfig::teachers`, same order.
    pub backends: Vec<&'a dyn ChatBackend>,
    pub oracle: OracleBackend<'a>,
    pub extractor: TestExtractor<'a>,
    /// Worker threads for paths within a tree; 1 runs sequentially.
    pub jobs: usize,
}

fn history<'a>(path: &[&'a TrajectoryNode]) -> Vec<HistoryTurn<'a>> {
    path.iter()
        .filter_map(|n| {
            n.turn.as_ref().map(|record| HistoryTurn {
                record,
                answers: &n.oracle_answers,
            })
        })
        .collect()
}

/// The prompt the agent sees for the turn following `path`.
pub fn prompt_for(env: &ClinicalEnvironment, path: &[&TrajectoryNode], window_size: usize, mode: TurnMode) -> Prompt {
    render_turn_prompt(env, &history(path), window_size, mode)
}

/// Identity of a node about to be produced.
#[derive(Debug, Clone)]
pub struct NodeSlot {
    pub branch_tag: String,
    pub phase: Phase,
    pub path_index: u32,
    pub mode: TurnMode,
}

/// Runs one agent turn after `path`. Failures are recorded on the node.
pub fn run_turn(
    env: &ClinicalEnvironment,
    path: &[&TrajectoryNode],
    teacher: Teacher<'_>,
    slot: &NodeSlot,
    runtime: &RolloutRuntime<'_>,
    config: &RolloutConfig,
) -> TrajectoryNode {
    let turn_index = path.len() as u32 + 1;
    let hist = history(path);
    let prompt = render_turn_prompt(env, &hist, config.window_size, slot.mode);
    let mut node = TrajectoryNode {
        node_id: format!("{}.t{}", slot.branch_tag, turn_index),
        parent_id: path.last().map(|n| n.node_id.clone()),
        case_id: env.case_id.clone(),
        teacher_label: teacher.spec.label.clone(),
        branch_tag: slot.branch_tag.clone(),
        phase: slot.phase,
        path_index: slot.path_index,
        turn_index,
        mode: slot.mode,
        turn: None,
        failure: None,
        ordered_tests: Vec::new(),
        oracle_answers: Vec::new(),
    };
    let fail = |node: &mut TrajectoryNode, kind: &str, message: String, raw: Option<String>| {
        log::warn!("{}: {kind} failure: {message}", node.node_id);
        node.failure = Some(TurnFailure {
            kind: kind.to_owned(),
            message,
            raw_reply: raw,
        });
    };

    let ctx = RequestContext::agent(&env.case_id, &slot.branch_tag, turn_index);
    let mut record = None;
    let mut last_err = None;
    for attempt in 0..2u32 {
        let user = if attempt == 0 {
            prompt.user.clone()
        } else {
            format!("{}\n\n{}", prompt.user, FORMAT_REMINDER.trim())
        };
        let req = ChatRequest::new(
            teacher.spec.model_id.clone(),
            vec![ChatMessage::system(prompt.system.clone()), ChatMessage::user(user)],
            config.sampling,
        );
        let ctx = RequestContext { attempt, ..ctx.clone() };
        let reply = match teacher.backend.complete(&req, &ctx) {
            Ok(r) => r,
            Err(e) => {
                fail(&mut node, "gateway", e.to_string(), None);
                return node;
            }
        };
        match parse_turn_reply(&reply, slot.mode) {
            Ok(r) => {
                record = Some(r);
                break;
            }
            Err(e) => {
                log::debug!("{}: attempt {attempt} unparseable: {e}", node.node_id);
                last_err = Some((e, reply));
            }
        }
    }
    let Some(mut record) = record else {
        let (e, raw) = last_err.expect("loop ran");
        fail(&mut node, "parse", e.to_string(), Some(raw));
        return node;
    };
    record.turn_index = turn_index;
    record.observation_digest = match hist.last() {
        Some(last) => render_oracle_results(last.answers),
        None => String::new(),
    };

    let requested = match extract_tests(&record, &runtime.extractor, &ctx) {
        Ok(t) => t,
        Err(e) => {
            fail(&mut node, "extraction", e.to_string(), Some(record.raw_reply.clone()));
            return node;
        }
    };
    let mut seen: HashSet<String> = path
        .iter()
        .flat_map(|n| n.ordered_tests.iter().chain(n.oracle_answers.iter().map(|a| &a.requested_name)))
        .map(|t| normalize(t))
        .collect();
    node.ordered_tests = requested.into_iter().filter(|t| seen.insert(normalize(t))).collect();

    // Results are only worth fetching when another turn will read them.
    let continues = !record.is_done() && turn_index < config.t_max;
    if continues && !node.ordered_tests.is_empty() {
        match query_oracle(env, &node.ordered_tests, &runtime.oracle, &ctx) {
            Ok(answers) => node.oracle_answers = answers,
            Err(e) => {
                fail(&mut node, "oracle", e.to_string(), Some(record.raw_reply.clone()));
                return node;
            }
        }
    }
    node.turn = Some(record);
    node
}

#[derive(Debug, Clone)]
struct PathPlan {
    slot: NodeSlot,
    teacher: usize,
    /// Node the path continues from; `None` for roots.
    launch: Option<String>,
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-case random stream; free-form flags are drawn first, then branch
/// points.
pub fn case_rng(seed: u64, case_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(case_id))
}

/// Branch launch candidates: parsed CONTINUE nodes of root paths with
/// 2 <= turn < t_max, sorted by node id.
pub fn branch_candidates(nodes: &[TrajectoryNode], t_max: u32) -> Vec<&TrajectoryNode> {
    let mut c: Vec<&TrajectoryNode> = nodes
        .iter()
        .filter(|n| n.phase == Phase::Root && n.turn_index >= 2 && !n.is_terminal(t_max))
        .collect();
    c.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    c
}

struct Sink<'s> {
    nodes: Mutex<Vec<TrajectoryNode>>,
    store: Option<&'s Mutex<StoreWriter>>,
}

impl Sink<'_> {
    fn push(&self, node: TrajectoryNode) -> Result<(), RolloutError> {
        if let Some(store) = self.store {
            store.lock().expect("store lock").append(&node)?;
        }
        self.nodes.lock().expect("node lock").push(node);
        Ok(())
    }
}

fn run_path(
    env: &ClinicalEnvironment,
    plan: &PathPlan,
    base: &[TrajectoryNode],
    config: &RolloutConfig,
    runtime: &RolloutRuntime<'_>,
    sink: &Sink<'_>,
) -> Result<(), RolloutError> {
    let by_id: BTreeMap<&str, &TrajectoryNode> = base.iter().map(|n| (n.node_id.as_str(), n)).collect();
    let mut path: Vec<TrajectoryNode> = Vec::new();
    let mut cur = plan.launch.as_deref().and_then(|id| by_id.get(id).copied());
    while let Some(n) = cur {
        path.push(n.clone());
        cur = n.parent_id.as_deref().and_then(|p| by_id.get(p).copied());
    }
    path.reverse();
    // Nodes of this path already in the store.
    let mut own: Vec<&TrajectoryNode> = base.iter().filter(|n| n.branch_tag == plan.slot.branch_tag).collect();
    own.sort_by_key(|n| n.turn_index);
    for n in own {
        if n.turn_index as usize == path.len() + 1 {
            path.push(n.clone());
        }
    }
    let teacher = Teacher {
        spec: &config.teachers[plan.teacher],
        backend: runtime.backends[plan.teacher],
    };
    while path.last().is_none_or(|n| !n.is_terminal(config.t_max)) {
        let refs: Vec<&TrajectoryNode> = path.iter().collect();
        let node = run_turn(env, &refs, teacher, &plan.slot, runtime, config);
        sink.push(node.clone())?;
        path.push(node);
    }
    Ok(())
}

fn run_plans(
    env: &ClinicalEnvironment,
    plans: &[PathPlan],
    base: &[TrajectoryNode],
    config: &RolloutConfig,
    runtime: &RolloutRuntime<'_>,
    sink: &Sink<'_>,
) -> Result<(), RolloutError> {
    let jobs = runtime.jobs.max(1).min(plans.len().max(1));
    if jobs == 1 {
        return plans.iter().try_for_each(|p| run_path(env, p, base, config, runtime, sink));
    }
    let next = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(plan) = plans.get(i) else { break };
                if let Err(e) = run_path(env, plan, base, config, runtime, sink) {
                    errors.lock().expect("error lock").push(e);
                    break;
                }
            });
        }
    });
    match errors.into_inner().expect("error lock").into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Grows the trajectory tree for one case.
///
/// Roots: `k_root` independent paths per teacher. Branches: up to
/// `branch_points` launch nodes drawn from the completed roots, each
/// continued once by the next teacher in the list (the same teacher when
/// there is only one). `existing` holds nodes recovered from a partial
/// store; paths they complete are not re-run.
pub fn run_tree_resumable(
    env: &ClinicalEnvironment,
    config: &RolloutConfig,
    runtime: &RolloutRuntime<'_>,
    existing: Vec<TrajectoryNode>,
    store: Option<&Mutex<StoreWriter>>,
) -> Result<TrajectoryTree, RolloutError> {
    config.validate()?;
    if runtime.backends.len() != config.teachers.len() {
        return Err(RolloutError::InvalidConfig(format!(
            "{} backends for {} teachers",
            runtime.backends.len(),
            config.teachers.len()
        )));
    }
    let mut rng = case_rng(config.seed, &env.case_id);
    let mut roots = Vec::new();
    for (ti, teacher) in config.teachers.iter().enumerate() {
        for i in 0..config.k_root {
            let free = rng.random_bool(config.free_form_ratio);
            roots.push(PathPlan {
                slot: NodeSlot {
                    branch_tag: format!("{}.r{}", teacher.label, i),
                    phase: Phase::Root,
                    path_index: roots.len() as u32,
                    mode: if free { TurnMode::FreeForm } else { TurnMode::Structured },
                },
                teacher: ti,
                launch: None,
            });
        }
    }

    let sink = Sink {
        nodes: Mutex::new(Vec::new()),
        store,
    };
    run_plans(env, &roots, &existing, config, runtime, &sink)?;
    let mut nodes = merge(existing, sink.nodes.into_inner().expect("node lock"));
    if !nodes.iter().any(|n| n.phase == Phase::Root && n.turn_index == 1 && n.turn.is_some()) {
        return Err(RolloutError::EmptyTree(env.case_id.clone()));
    }

    let candidates = branch_candidates(&nodes, config.t_max);
    let amount = (config.branch_points as usize).min(candidates.len());
    let mut picks = index::sample(&mut rng, candidates.len(), amount).into_vec();
    picks.sort_unstable();
    let teacher_of: BTreeMap<&str, usize> =
        config.teachers.iter().enumerate().map(|(i, t)| (t.label.as_str(), i)).collect();
    let branches: Vec<PathPlan> = picks
        .iter()
        .enumerate()
        .map(|(j, &ci)| {
            let launch = candidates[ci];
            let parent_teacher = teacher_of.get(launch.teacher_label.as_str()).copied().unwrap_or(0);
            let teacher = (parent_teacher + 1) % config.teachers.len();
            PathPlan {
                slot: NodeSlot {
                    branch_tag: format!("{}.b{}", config.teachers[teacher].label, j),
                    phase: Phase::Branch,
                    path_index: j as u32,
                    mode: launch.mode,
                },
                teacher,
                launch: Some(launch.node_id.clone()),
            }
        })
        .collect();
    let sink = Sink {
        nodes: Mutex::new(Vec::new()),
        store,
    };
    run_plans(env, &branches, &nodes, config, runtime, &sink)?;
    nodes = merge(nodes, sink.nodes.into_inner().expect("node lock"));

    Ok(TrajectoryTree {
        case_id: env.case_id.clone(),
        nodes,
        config: config.clone(),
    })
}

pub fn run_tree(
    env: &ClinicalEnvironment,
    config: &RolloutConfig,
    runtime: &RolloutRuntime<'_>,
) -> Result<TrajectoryTree, RolloutError> {
    run_tree_resumable(env, config, runtime, Vec::new(), None)
}

/// Union in canonical order: phase, path, turn.
fn merge(mut a: Vec<TrajectoryNode>, b: Vec<TrajectoryNode>) -> Vec<TrajectoryNode> {
    a.extend(b);
    a.sort_by_key(|n| n.sort_key());
    a.dedup_by(|x, y| x.node_id == y.node_id);
    a
}

/// One materialized step of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub node_id: String,
    pub teacher_label: String,
    pub record: TurnRecord,
    pub ordered_tests: Vec<String>,
    pub oracle_answers: Vec<OracleAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub case_id: String,
    /// Node ids from root to leaf joined by '/'.
    pub node_path: String,
    /// Teacher of the final step.
    pub teacher_label: String,
    pub mode: TurnMode,
    pub steps: Vec<TrajectoryStep>,
    /// The path ended on a failed turn, which is not included.
    pub ended_in_failure: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TurnRecord> {
        self.steps.iter().map(|s| &s.record)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializeStats {
    pub trajectories: usize,
    pub failed_roots: usize,
    pub failed_paths: usize,
}

/// One trajectory per leaf, root to leaf. Failed nodes are cut off; a
/// path that failed on its first turn yields nothing and is counted.
pub fn materialize_paths(tree: &TrajectoryTree) -> (Vec<Trajectory>, MaterializeStats) {
    let mut stats = MaterializeStats::default();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for leaf in tree.leaves() {
        let path = tree.path_to(&leaf.node_id);
        let failed = leaf.failure.is_some() || leaf.turn.is_none();
        if failed {
            stats.failed_paths += 1;
        }
        let steps: Vec<TrajectoryStep> = path
            .iter()
            .filter_map(|n| {
                n.turn.as_ref().map(|record| TrajectoryStep {
                    node_id: n.node_id.clone(),
                    teacher_label: n.teacher_label.clone(),
                    record: record.clone(),
                    ordered_tests: n.ordered_tests.clone(),
                    oracle_answers: n.oracle_answers.clone(),
                })
            })
            .collect();
        let Some(last) = steps.last() else {
            stats.failed_roots += 1;
            continue;
        };
        let node_path = steps.iter().map(|s| s.node_id.as_str()).collect::<Vec<_>>().join("/");
        // A failed leaf whose prefix is also an interior path adds nothing new.
        if failed && tree.children(&last.node_id).any(|c| c.turn.is_some()) {
            continue;
        }
        if !seen.insert(node_path.clone()) {
            continue;
        }
        out.push(Trajectory {
            case_id: tree.case_id.clone(),
            node_path,
            teacher_label: last.teacher_label.clone(),
            mode: path[0].mode,
            ended_in_failure: failed,
            steps,
        });
    }
    out.sort_by(|a, b| a.node_path.cmp(&b.node_path));
    stats.trajectories = out.len();
    (out, stats)
}

pub fn nodes_to_jsonl(nodes: &[TrajectoryNode]) -> String {
    let mut out = String::new();
    for n in nodes {
        out.push_str(&serde_json::to_string(n).expect("node serializes"));
        out.push('\n');
    }
    out
}

/// Append-only JSONL node store for one case.
pub struct StoreWriter {
    path: PathBuf,
    file: BufWriter<File>,
}

impl StoreWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RolloutError> {
        let path = path.as_ref().to_owned();
        let err = |source| RolloutError::Store {
            path: path.display().to_string(),
            source,
        };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        Ok(Self {
            path,
            file: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, node: &TrajectoryNode) -> Result<(), RolloutError> {
        let line = serde_json::to_string(node).expect("node serializes");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|source| RolloutError::Store {
                path: self.path.display().to_string(),
                source,
            })
    }
}

/// Nodes recorded in a store, plus whether a torn trailing line was
/// dropped. Missing files read as empty.
pub fn read_store(path: impl AsRef<Path>) -> Result<(Vec<TrajectoryNode>, bool), RolloutError> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), false)),
        Err(source) => {
            return Err(RolloutError::Store {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut nodes = Vec::new();
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<TrajectoryNode>(line) {
            Ok(n) => nodes.push(n),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: dropping torn trailing line: {e}", path.display());
                torn = true;
            }
            Err(e) => {
                return Err(RolloutError::Store {
                    path: path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
                })
            }
        }
    }
    Ok((nodes, torn))
}

/// Writes nodes in canonical order, replacing the file atomically.
pub fn write_store(path: impl AsRef<Path>, nodes: &[TrajectoryNode]) -> Result<(), RolloutError> {
    let path = path.as_ref();
    let mut sorted = nodes.to_vec();
    sorted.sort_by_key(|n| n.sort_key());
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, nodes_to_jsonl(&sorted))
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|source| RolloutError::Store {
            path: path.display().to_string(),
            source,
        })
}

/// Runs (or resumes) a case against its store file and leaves the store
/// in canonical order.
pub fn run_tree_with_store(
    env: &ClinicalEnvironment,
    config: &RolloutConfig,
    runtime: &RolloutRuntime<'_>,
    store_path: impl AsRef<Path>,
) -> Result<TrajectoryTree, RolloutError> {
    let store_path = store_path.as_ref();
    let (existing, torn) = read_store(store_path)?;
    if torn {
        // Drop the torn tail before appending.
        write_store(store_path, &existing)?;
    }
    let writer = Mutex::new(StoreWriter::open(store_path)?);
    let result = run_tree_resumable(env, config, runtime, existing, Some(&writer));
    drop(writer);
    let (all, _) = read_store(store_path)?;
    write_store(store_path, &merge(all, Vec::new()))?;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn config_validation() {
        let mut c = RolloutConfig {
            teachers: vec![TeacherSpec::scripted("a")],
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        c.free_form_ratio = 1.5;
        assert!(c.validate().is_err());
        c.free_form_ratio = 0.1;
        c.teachers.push(TeacherSpec::scripted("a"));
        assert!(c.validate().is_err());
        c.teachers = vec![TeacherSpec::scripted("a.b")];
        assert!(c.validate().is_err());
        c.teachers.clear();
        assert!(c.validate().is_err());
    }
}
