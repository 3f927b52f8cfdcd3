//! Browser bindings for three pipeline operations. Every export takes and
//! returns JSON text; failures come back as `{"error": "..."}`.

use std::sync::OnceLock;

use dxdistill::eval::match_tests_deterministic;
use dxdistill::filter::{prune_dtc, prune_rac, RacPoint};
use dxdistill::graph::{parse_edges, parse_nodes, Hops, KnowledgeGraph, Linker};
use dxdistill::text::SynonymTable;
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DISEASE_NODES: &str = include_str!("../../core/fixtures/graphs/disease/nodes.tsv");
const DISEASE_EDGES: &str = include_str!("../../core/fixtures/graphs/disease/edges.tsv");
const TEST_NODES: &str = include_str!("../../core/fixtures/graphs/test_disease/nodes.tsv");
const TEST_EDGES: &str = include_str!("../../core/fixtures/graphs/test_disease/edges.tsv");

fn bundled(name: &str) -> Result<&'static KnowledgeGraph, String> {
    static DISEASE: OnceLock<KnowledgeGraph> = OnceLock::new();
    static TEST: OnceLock<KnowledgeGraph> = OnceLock::new();
    let (cell, nodes, edges) = match name {
        "disease" => (&DISEASE, DISEASE_NODES, DISEASE_EDGES),
        "test_disease" => (&TEST, TEST_NODES, TEST_EDGES),
        other => return Err(format!("unknown graph {other:?} (disease, test_disease)")),
    };
    if let Some(g) = cell.get() {
        return Ok(g);
    }
    let nodes = parse_nodes(nodes, "nodes.tsv").map_err(|e| e.to_string())?;
    let edges = parse_edges(edges, "edges.tsv").map_err(|e| e.to_string())?;
    let g = KnowledgeGraph::from_parts(name, nodes, edges).map_err(|e| e.to_string())?;
    Ok(cell.get_or_init(|| g))
}

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

#[derive(Deserialize)]
struct PruneInput {
    /// DTC per turn; `null` for a turn with no linked hypothesis.
    dtc: Vec<Option<u32>>,
    /// `[total_hops, count]` for turns 2..=T.
    #[serde(default)]
    rac: Vec<(u64, u32)>,
    tau: u32,
}

fn prune(input: &str) -> Result<Value, String> {
    let input: PruneInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if input.dtc.is_empty() {
        return Err("dtc needs at least one turn".into());
    }
    if input.rac.len() + 1 > input.dtc.len() {
        return Err("rac has more entries than turns 2..=T".into());
    }
    let rac: Vec<RacPoint> = input
        .rac
        .iter()
        .enumerate()
        .map(|(i, &(total, count))| RacPoint::new(i as u32 + 2, total, count))
        .collect();
    let after_dtc = prune_dtc(&input.dtc);
    let outcome = prune_rac(&after_dtc, &rac, input.tau);
    Ok(json!({
        "after_dtc": after_dtc,
        "outcome": outcome,
        "rac_values": rac.iter().map(|p| p.value()).collect::<Vec<_>>(),
    }))
}

/// DTC truncation followed by the single RAC pass.
///
/// Input: `{"dtc": [2, 1, 1, 0], "rac": [[5, 1], [5, 1], [0, 0]], "tau": 3}`.
#[wasm_bindgen]
pub fn prune_trajectory(input: &str) -> String {
    respond(prune(input))
}

fn distance(graph: &str, a: &str, b: &str) -> Result<Value, String> {
    let g = bundled(graph)?;
    let linker = Linker::default();
    let la = linker.link(g, a);
    let lb = linker.link(g, b);
    let hops = match (&la.node_id, &lb.node_id) {
        (Some(x), Some(y)) => match g.hop_distance(x, y).map_err(|e| e.to_string())? {
            Hops::Finite(h) => json!(h),
            Hops::Unreachable => json!("unreachable"),
        },
        _ => Value::Null,
    };
    let name = |id: &Option<String>| id.as_deref().and_then(|i| g.node(i)).map(|n| n.canonical_name.clone());
    Ok(json!({
        "a": { "link": la, "name": name(&la.node_id) },
        "b": { "link": lb, "name": name(&lb.node_id) },
        "hops": hops,
    }))
}

/// Links two free-text entities on a bundled graph (`disease` or
/// `test_disease`) and returns their hop distance.
#[wasm_bindgen]
pub fn link_and_measure(graph: &str, a: &str, b: &str) -> String {
    respond(distance(graph, a, b))
}

/// Names of every node in a bundled graph, for the page's suggestions.
#[wasm_bindgen]
pub fn graph_nodes(graph: &str) -> String {
    respond(bundled(graph).map(|g| json!(g.nodes().iter().map(|n| &n.canonical_name).collect::<Vec<_>>())))
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Deterministic test matching. Both arguments hold one test per line;
/// a ground-truth line with commas or slashes is one compound unit.
#[wasm_bindgen]
pub fn match_tests(predicted: &str, ground_truth: &str) -> String {
    let gt = lines(ground_truth);
    if gt.is_empty() {
        return respond(Err("ground truth is empty".into()));
    }
    let report = match_tests_deterministic(&lines(predicted), &gt, &SynonymTable::default());
    respond(Ok(json!({
        "precision": report.precision(),
        "recall": report.recall(),
        "f1": report.f1(),
        "report": report,
    })))
}
