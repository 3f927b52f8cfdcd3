//! Undirected knowledge graphs with hop-distance queries and a
//! deterministic lexical entity linker.
//!
//! Graphs are read from two tab-separated files:
//!
//! ```text
//! # nodes.tsv
//! node_id<TAB>canonical_name<TAB>syn1|syn2|...
//! # edges.tsv
//! node_id_a<TAB>node_id_b
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. The synonym column
//! is optional.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize, overlap_score, tokens};

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file}: malformed line {line_no}")]
    MalformedLine { file: String, line_no: usize },
    #[error("edge references unknown node {0:?}")]
    DanglingEdge(String),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("self-loop on node {0:?}")]
    SelfLoop(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shortest-path length in edges, or unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hops {
    Finite(u32),
    Unreachable,
}

impl Hops {
    /// Maps `Unreachable` to `cap`. Finite distances above the cap are
    /// left as they are.
    pub fn capped(self, cap: u32) -> u32 {
        match self {
            Hops::Finite(h) => h,
            Hops::Unreachable => cap,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Hops::Finite(h) => Some(h),
            Hops::Unreachable => None,
        }
    }
}

impl fmt::Display for Hops {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hops::Finite(h) => write!(f, "{h}"),
            Hops::Unreachable => f.write_str("UNREACHABLE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
}

impl GraphNode {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

const UNVISITED: u32 = u32::MAX;

/// Immutable undirected graph. Safe to share across threads; single-source
/// BFS results are memoized per source node.
pub struct KnowledgeGraph {
    name: String,
    nodes: Vec<GraphNode>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<u32>>,
    edge_count: usize,
    exact_labels: HashMap<String, BTreeSet<usize>>,
    normalized_labels: HashMap<String, BTreeSet<usize>>,
    token_index: HashMap<String, BTreeSet<usize>>,
    bfs_cache: RwLock<HashMap<usize, Arc<Vec<u32>>>>,
    cache_capacity: usize,
}

impl fmt::Debug for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeGraph")
            .field("name", &self.name)
            .field("nodes", &self.nodes.len())
            .field("edges", &self.edge_count)
            .finish()
    }
}

impl KnowledgeGraph {
    /// Builds a graph from in-memory parts. Duplicate edges (in either
    /// orientation) collapse to one.
    pub fn from_parts(
        name: impl Into<String>,
        nodes: Vec<GraphNode>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            let ia = *index.get(&a).ok_or(GraphError::DanglingEdge(a.clone()))?;
            let ib = *index.get(&b).ok_or(GraphError::DanglingEdge(b.clone()))?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a));
            }
            edge_set.insert((ia.min(ib), ia.max(ib)));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edge_set {
            adjacency[a].push(b as u32);
            adjacency[b].push(a as u32);
        }

        let mut exact_labels: HashMap<String, BTreeSet<usize>> = HashMap::new();
        let mut normalized_labels: HashMap<String, BTreeSet<usize>> = HashMap::new();
        let mut token_index: HashMap<String, BTreeSet<usize>> = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            for label in n.labels() {
                exact_labels.entry(label.to_owned()).or_default().insert(i);
                let norm = normalize(label);
                if norm.is_empty() {
                    continue;
                }
                for tok in norm.split(' ') {
                    token_index.entry(tok.to_owned()).or_default().insert(i);
                }
                normalized_labels.entry(norm).or_default().insert(i);
            }
        }

        Ok(Self {
            name: name.into(),
            nodes,
            index,
            adjacency,
            edge_count: edge_set.len(),
            exact_labels,
            normalized_labels,
            token_index,
            bfs_cache: RwLock::new(HashMap::new()),
            cache_capacity: 4096,
        })
    }

    /// Loads a graph from a node file and an edge file.
    pub fn load(
        name: impl Into<String>,
        node_file: impl AsRef<Path>,
        edge_file: impl AsRef<Path>,
    ) -> Result<Self, GraphError> {
        let node_path = node_file.as_ref();
        let edge_path = edge_file.as_ref();
        let node_text = read(node_path)?;
        let edge_text = read(edge_path)?;
        let nodes = parse_nodes(&node_text, &node_path.display().to_string())?;
        let edges = parse_edges(&edge_text, &edge_path.display().to_string())?;
        Self::from_parts(name, nodes, edges)
    }

    /// Loads `nodes.tsv` and `edges.tsv` from a directory.
    pub fn load_dir(name: impl Into<String>, dir: impl AsRef<Path>) -> Result<Self, GraphError> {
        let dir = dir.as_ref();
        Self::load(name, dir.join("nodes.tsv"), dir.join("edges.tsv"))
    }

    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache_capacity = capacity;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains_edge(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.adjacency[ia].contains(&(ib as u32)),
            _ => false,
        }
    }

    /// Unordered edge list, each edge once with endpoints in id order.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            for &b in nbrs {
                if (b as usize) > a {
                    let (x, y) = (&self.nodes[a].id, &self.nodes[b as usize].id);
                    out.push(if x <= y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) });
                }
            }
        }
        out.sort();
        out
    }

    fn idx(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_owned()))
    }

    /// Shortest-path length in edges between two nodes.
    pub fn hop_distance(&self, a: &str, b: &str) -> Result<Hops, GraphError> {
        let ia = self.idx(a)?;
        let ib = self.idx(b)?;
        if ia == ib {
            return Ok(Hops::Finite(0));
        }
        let dist = self.distances_from(ia);
        Ok(match dist[ib] {
            UNVISITED => Hops::Unreachable,
            d => Hops::Finite(d),
        })
    }

    /// Minimum hop distance from `a` to any of `targets`; unreachable when
    /// `targets` is empty or none is reachable.
    pub fn min_hop_distance<'a>(
        &self,
        a: &str,
        targets: impl IntoIterator<Item = &'a str>,
    ) -> Result<Hops, GraphError> {
        let ia = self.idx(a)?;
        let dist = self.distances_from(ia);
        let mut best = UNVISITED;
        for t in targets {
            best = best.min(dist[self.idx(t)?]);
        }
        Ok(if best == UNVISITED { Hops::Unreachable } else { Hops::Finite(best) })
    }

    fn distances_from(&self, source: usize) -> Arc<Vec<u32>> {
        if let Some(hit) = self.bfs_cache.read().expect("bfs cache poisoned").get(&source) {
            return Arc::clone(hit);
        }
        let dist = Arc::new(bfs(&self.adjacency, source));
        let mut cache = self.bfs_cache.write().expect("bfs cache poisoned");
        if cache.len() < self.cache_capacity {
            cache.entry(source).or_insert_with(|| Arc::clone(&dist));
        }
        dist
    }

    pub fn cached_sources(&self) -> usize {
        self.bfs_cache.read().expect("bfs cache poisoned").len()
    }

    /// Links free text to a node with the default threshold and no
    /// external backend.
    pub fn link_entity(&self, text: &str) -> LinkResult {
        Linker::default().link(self, text)
    }
}

fn bfs(adjacency: &[Vec<u32>], source: usize) -> Vec<u32> {
    let mut dist = vec![UNVISITED; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source as u32]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u as usize] + 1;
        for &v in &adjacency[u as usize] {
            if dist[v as usize] == UNVISITED {
                dist[v as usize] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn read(path: &Path) -> Result<String, GraphError> {
    std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

pub fn parse_nodes(text: &str, file: &str) -> Result<Vec<GraphNode>, GraphError> {
    let malformed = |line_no| GraphError::MalformedLine {
        file: file.to_owned(),
        line_no,
    };
    let mut nodes = Vec::new();
    for (line_no, line) in content_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&cols.len()) {
            return Err(malformed(line_no));
        }
        let id = cols[0].trim();
        let name = cols[1].trim();
        if id.is_empty() || name.is_empty() {
            return Err(malformed(line_no));
        }
        let synonyms = cols
            .get(2)
            .map(|s| {
                s.split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            })
            .unwrap_or_default();
        nodes.push(GraphNode {
            id: id.to_owned(),
            canonical_name: name.to_owned(),
            synonyms,
        });
    }
    Ok(nodes)
}

pub fn parse_edges(text: &str, file: &str) -> Result<Vec<(String, String)>, GraphError> {
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        match cols.as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => edges.push(((*a).to_owned(), (*b).to_owned())),
            _ => {
                return Err(GraphError::MalformedLine {
                    file: file.to_owned(),
                    line_no,
                })
            }
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMethod {
    Exact,
    Normalized,
    Fuzzy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub query: String,
    pub node_id: Option<String>,
    pub score: f64,
    pub method: LinkMethod,
}

/// Pluggable linker backend consulted after the lexical stages fail.
pub trait ExternalLinker: Send + Sync {
    /// Returns the best candidate node id with a score in `[0, 1]`.
    fn best_match(&self, graph: &KnowledgeGraph, text: &str) -> Option<(String, f64)>;
}

/// Exact, normalized, then token-overlap fuzzy linking, with an optional
/// external backend as the last stage.
#[derive(Clone)]
pub struct Linker {
    pub threshold: f64,
    pub external: Option<Arc<dyn ExternalLinker>>,
}

impl Default for Linker {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_LINK_THRESHOLD,
            external: None,
        }
    }
}

impl fmt::Debug for Linker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Linker")
            .field("threshold", &self.threshold)
            .field("external", &self.external.is_some())
            .finish()
    }
}

impl Linker {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            external: None,
        }
    }

    pub fn link(&self, graph: &KnowledgeGraph, text: &str) -> LinkResult {
        let query = text.to_owned();
        let smallest_id = |set: &BTreeSet<usize>| {
            set.iter()
                .map(|&i| graph.nodes[i].id.as_str())
                .min()
                .map(str::to_owned)
        };

        if let Some(hit) = graph.exact_labels.get(text.trim()).and_then(smallest_id) {
            return LinkResult {
                query,
                node_id: Some(hit),
                score: 1.0,
                method: LinkMethod::Exact,
            };
        }
        let norm = normalize(text);
        if let Some(hit) = graph.normalized_labels.get(&norm).and_then(smallest_id) {
            return LinkResult {
                query,
                node_id: Some(hit),
                score: 1.0,
                method: LinkMethod::Normalized,
            };
        }

        let query_tokens = tokens(text);
        let mut candidates = BTreeSet::new();
        for tok in &query_tokens {
            if let Some(set) = graph.token_index.get(tok) {
                candidates.extend(set.iter().copied());
            }
        }
        let mut best: Option<(f64, &str)> = None;
        for i in candidates {
            let node = &graph.nodes[i];
            let score = node
                .labels()
                .map(|l| overlap_score(&query_tokens, &tokens(l)))
                .fold(0.0, f64::max);
            let better = match best {
                None => true,
                Some((s, id)) => score > s || (score == s && node.id.as_str() < id),
            };
            if better {
                best = Some((score, node.id.as_str()));
            }
        }
        let (fuzzy_score, fuzzy_id) = best.map(|(s, id)| (s, Some(id))).unwrap_or((0.0, None));
        if fuzzy_score >= self.threshold {
            return LinkResult {
                query,
                node_id: fuzzy_id.map(str::to_owned),
                score: fuzzy_score,
                method: LinkMethod::Fuzzy,
            };
        }

        if let Some(ext) = &self.external {
            if let Some((id, score)) = ext.best_match(graph, text) {
                let accepted = score >= self.threshold && graph.node(&id).is_some();
                return LinkResult {
                    query,
                    node_id: accepted.then_some(id),
                    score,
                    method: LinkMethod::External,
                };
            }
        }

        LinkResult {
            query,
            node_id: None,
            score: fuzzy_score,
            method: LinkMethod::Fuzzy,
        }
    }
}
