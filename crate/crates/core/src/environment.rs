//! A clinical case as an interactive environment: initial observation,
//! a menu of documented tests, and an oracle that answers test orders.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError, Purpose, RequestContext, SamplingParams};
use crate::prompts;
use crate::text::{normalize, TermMatcher};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case schema violation at `{0}`")]
    SchemaViolation(String),
    #[error("duplicate test in menu: {0:?}")]
    DuplicateTest(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEntry {
    pub name: String,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalEnvironment {
    pub case_id: String,
    pub initial_observation: String,
    pub ground_truth_diagnosis: String,
    pub test_menu: Vec<TestEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Curated reference tests for evaluation; the full menu when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tests: Option<Vec<String>>,
}

fn required_str(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String, CaseError> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        _ => Err(CaseError::SchemaViolation(field.to_owned())),
    }
}

impl ClinicalEnvironment {
    /// Parses and validates a case JSON document.
    pub fn from_json_str(text: &str) -> Result<Self, CaseError> {
        let value: Value = serde_json::from_str(text).map_err(|_| CaseError::SchemaViolation("$".into()))?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self, CaseError> {
        let obj = value
            .as_object()
            .ok_or_else(|| CaseError::SchemaViolation("$".into()))?;
        let case_id = required_str(obj, "case_id")?;
        let initial_observation = required_str(obj, "initial_observation")?;
        let ground_truth_diagnosis = required_str(obj, "ground_truth_diagnosis")?;
        let menu = obj
            .get("test_menu")
            .and_then(Value::as_array)
            .ok_or_else(|| CaseError::SchemaViolation("test_menu".into()))?;
        let mut test_menu = Vec::with_capacity(menu.len());
        for (i, item) in menu.iter().enumerate() {
            let entry = item
                .as_object()
                .ok_or_else(|| CaseError::SchemaViolation(format!("test_menu[{i}]")))?;
            let name = required_str(entry, "name")
                .map_err(|_| CaseError::SchemaViolation(format!("test_menu[{i}].name")))?;
            let result = required_str(entry, "result")
                .map_err(|_| CaseError::SchemaViolation(format!("test_menu[{i}].result")))?;
            test_menu.push(TestEntry { name, result });
        }
        let metadata = match obj.get("metadata") {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, v)| match v {
                    Value::String(s) => Ok((k.clone(), s.clone())),
                    _ => Err(CaseError::SchemaViolation(format!("metadata.{k}"))),
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(CaseError::SchemaViolation("metadata".into())),
        };
        let gt_tests = match obj.get("gt_tests") {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => Some(
                items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
                        _ => Err(CaseError::SchemaViolation("gt_tests".into())),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            Some(_) => return Err(CaseError::SchemaViolation("gt_tests".into())),
        };
        let env = Self {
            case_id,
            initial_observation,
            ground_truth_diagnosis,
            test_menu,
            metadata,
            gt_tests,
        };
        env.validate()?;
        Ok(env)
    }

    /// Checks the invariants that the typed fields alone cannot express.
    pub fn validate(&self) -> Result<(), CaseError> {
        for (field, value) in [
            ("case_id", &self.case_id),
            ("initial_observation", &self.initial_observation),
            ("ground_truth_diagnosis", &self.ground_truth_diagnosis),
        ] {
            if value.trim().is_empty() {
                return Err(CaseError::SchemaViolation(field.into()));
            }
        }
        let mut seen = HashSet::new();
        for (i, t) in self.test_menu.iter().enumerate() {
            if t.name.trim().is_empty() {
                return Err(CaseError::SchemaViolation(format!("test_menu[{i}].name")));
            }
            if t.result.trim().is_empty() {
                return Err(CaseError::SchemaViolation(format!("test_menu[{i}].result")));
            }
            if !seen.insert(normalize(&t.name)) {
                return Err(CaseError::DuplicateTest(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn reference_tests(&self) -> Vec<String> {
        match &self.gt_tests {
            Some(t) => t.clone(),
            None => self.test_menu.iter().map(|t| t.name.clone()).collect(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<ClinicalEnvironment, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ClinicalEnvironment::from_json_str(&text)
}

/// Loads every `*.json` case in a directory, in file-name order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<ClinicalEnvironment>, CaseError> {
    corpus_files(dir)?.iter().map(load_case).collect()
}

pub fn corpus_files(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>, CaseError> {
    let dir = dir.as_ref();
    let io = |source| CaseError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "json") && path.file_name().is_some_and(|n| n != "manifest.json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleStatus {
    Available,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub requested_name: String,
    pub status: OracleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_entry: Option<String>,
}

impl OracleAnswer {
    pub fn is_available(&self) -> bool {
        self.status == OracleStatus::Available
    }

    pub fn unavailable(name: &str) -> Self {
        Self {
            requested_name: name.to_owned(),
            status: OracleStatus::Unavailable,
            result: None,
            matched_entry: None,
        }
    }

    /// One-line rendering used in follow-up prompts.
    pub fn render(&self) -> String {
        match (&self.status, &self.result) {
            (OracleStatus::Available, Some(result)) => format!("{}: {}", self.requested_name, result),
            _ => prompts::unavailable_message(&self.requested_name),
        }
    }
}

/// How test orders are answered.
#[derive(Clone, Copy)]
pub enum OracleBackend<'a> {
    /// Fuzzy matching against the menu; hermetic.
    Deterministic(&'a MenuMatcher),
    /// An LLM playing the hospital administrator.
    Chat {
        backend: &'a dyn ChatBackend,
        model_id: &'a str,
        params: SamplingParams,
        matcher: &'a MenuMatcher,
    },
}

/// Matches free-text test requests to menu entries.
#[derive(Debug, Clone)]
pub struct MenuMatcher {
    pub terms: TermMatcher,
    pub threshold: f64,
}

impl Default for MenuMatcher {
    fn default() -> Self {
        Self {
            terms: TermMatcher::default(),
            threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

impl MenuMatcher {
    /// Best menu entry scoring at least the threshold; ties go to the
    /// lexicographically smallest entry name.
    pub fn best_entry<'e>(&self, env: &'e ClinicalEnvironment, requested: &str) -> Option<(&'e TestEntry, f64)> {
        self.best_any(env, requested).filter(|(_, s)| *s >= self.threshold)
    }

    fn best_any<'e>(&self, env: &'e ClinicalEnvironment, requested: &str) -> Option<(&'e TestEntry, f64)> {
        let mut best: Option<(&TestEntry, f64)> = None;
        for entry in &env.test_menu {
            let score = self.terms.score(requested, &entry.name);
            let better = match best {
                None => score > 0.0,
                Some((e, s)) => score > s || (score == s && entry.name < e.name),
            };
            if better {
                best = Some((entry, score));
            }
        }
        best
    }

    pub fn answer(&self, env: &ClinicalEnvironment, requested: &str) -> OracleAnswer {
        match self.best_entry(env, requested) {
            Some((entry, _)) => OracleAnswer {
                requested_name: requested.to_owned(),
                status: OracleStatus::Available,
                result: Some(entry.result.clone()),
                matched_entry: Some(entry.name.clone()),
            },
            None => OracleAnswer::unavailable(requested),
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("empty test request")]
    EmptyRequest,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Answers a batch of test orders against the environment.
pub fn query_oracle(
    env: &ClinicalEnvironment,
    requested: &[String],
    backend: &OracleBackend<'_>,
    ctx: &RequestContext,
) -> Result<Vec<OracleAnswer>, OracleError> {
    if requested.is_empty() || requested.iter().any(|r| r.trim().is_empty()) {
        return Err(OracleError::EmptyRequest);
    }
    match backend {
        OracleBackend::Deterministic(matcher) => Ok(requested.iter().map(|r| matcher.answer(env, r)).collect()),
        OracleBackend::Chat {
            backend,
            model_id,
            params,
            matcher,
        } => {
            let system = prompts::render_oracle_prompt(env);
            let user = requested.join("\n");
            let req = ChatRequest::new(*model_id, vec![ChatMessage::system(system), ChatMessage::user(user)], *params);
            let reply = backend.complete(&req, &ctx.clone().with_purpose(Purpose::Oracle))?;
            Ok(parse_oracle_reply(env, requested, &reply, matcher))
        }
    }
}

/// Reads `name: findings` lines from an oracle reply. A request with no
/// line of its own, or whose line says UNAVAILABLE, is unavailable.
pub fn parse_oracle_reply(
    env: &ClinicalEnvironment,
    requested: &[String],
    reply: &str,
    matcher: &MenuMatcher,
) -> Vec<OracleAnswer> {
    let lines: Vec<(String, String)> = reply
        .lines()
        .filter_map(|l| {
            let l = l.trim().trim_start_matches(['-', '*', '"']).trim();
            l.split_once(':').map(|(k, v)| (normalize(k), v.trim().trim_end_matches('"').to_owned()))
        })
        .collect();
    requested
        .iter()
        .map(|r| {
            let key = normalize(r);
            let found = lines.iter().find(|(k, _)| *k == key).map(|(_, v)| v);
            let entry = matcher.best_any(env, r).map(|(e, _)| e.name.clone());
            match (found, entry) {
                (Some(text), Some(entry)) if !text.contains("UNAVAILABLE") && !text.is_empty() => OracleAnswer {
                    requested_name: r.clone(),
                    status: OracleStatus::Available,
                    result: Some(text.clone()),
                    matched_entry: Some(entry),
                },
                _ => OracleAnswer::unavailable(r),
            }
        })
        .collect()
}

/// Asks a model to turn raw case-report text into the case schema.
pub fn extract_case(
    raw_text: &str,
    backend: &dyn ChatBackend,
    model_id: &str,
    params: SamplingParams,
    ctx: &RequestContext,
) -> Result<ClinicalEnvironment, CaseError> {
    if raw_text.trim().is_empty() {
        return Err(CaseError::SchemaViolation("raw_text".into()));
    }
    let req = ChatRequest::new(
        model_id,
        vec![
            ChatMessage::system(prompts::EXTRACT_CASE_PROMPT),
            ChatMessage::user(raw_text.to_owned()),
        ],
        params,
    );
    let reply = backend.complete(&req, &ctx.clone().with_purpose(Purpose::ExtractCase))?;
    ClinicalEnvironment::from_json_str(strip_code_fence(&reply))
}

/// Removes a surrounding markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
        rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
    } else {
        t
    }
}
