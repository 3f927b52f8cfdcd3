//! Agent turns: the structured reply schema, its parser, and test
//! extraction from parsed turns.

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::strip_code_fence;
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError, Purpose, RequestContext, SamplingParams};
use crate::prompts::EXTRACT_TESTS_PROMPT;
use crate::text::{normalize, split_compound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnMode {
    Structured,
    FreeForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DiagnosticStatus {
    Done,
    Continue,
}

impl fmt::Display for DiagnosticStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticStatus::Done => "DONE",
            DiagnosticStatus::Continue => "CONTINUE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdxEntry {
    pub rank: u32,
    pub diagnosis: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionItem {
    pub test: String,
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoRequest {
    pub category: String,
    pub request: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionalInfo {
    NotRequired,
    Requests(Vec<InfoRequest>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u32,
    /// New results shown to the agent this turn; empty at turn 1.
    pub observation_digest: String,
    pub chain_of_thought: String,
    pub ddx: Vec<DdxEntry>,
    pub pivot: String,
    pub primary_actions: Vec<ActionItem>,
    pub additional_info: AdditionalInfo,
    pub status: DiagnosticStatus,
    pub conclusion: String,
    pub raw_reply: String,
    pub mode: TurnMode,
}

impl TurnRecord {
    pub fn top_hypothesis(&self) -> Option<&str> {
        self.ddx.first().map(|d| d.diagnosis.as_str())
    }

    pub fn is_done(&self) -> bool {
        self.status == DiagnosticStatus::Done
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    ChainOfThought,
    DdxList,
    Pivot,
    PrimaryActions,
    AdditionalInformation,
    DiagnosticStatus,
    Conclusion,
}

impl Section {
    pub const ALL: [Section; 7] = [
        Section::ChainOfThought,
        Section::DdxList,
        Section::Pivot,
        Section::PrimaryActions,
        Section::AdditionalInformation,
        Section::DiagnosticStatus,
        Section::Conclusion,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Section::ChainOfThought => "Chain of Thought",
            Section::DdxList => "DDx List",
            Section::Pivot => "Pivot",
            Section::PrimaryActions => "Primary Actions",
            Section::AdditionalInformation => "Additional Information Required",
            Section::DiagnosticStatus => "Diagnostic Status",
            Section::Conclusion => "Conclusion",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Section::ChainOfThought => &["chain of thought", "chain of thoughts"],
            Section::DdxList => &["ddx list", "ddx", "differential diagnosis list", "differential diagnosis"],
            Section::Pivot => &["pivot"],
            Section::PrimaryActions => &["primary actions", "primary action"],
            Section::AdditionalInformation => &["additional information required", "additional information"],
            Section::DiagnosticStatus => &["diagnostic status"],
            Section::Conclusion => &["conclusion"],
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("reply is empty")]
    EmptyReply,
    #[error("missing section {0:?}")]
    MissingSection(String),
    #[error("empty section {0:?}")]
    EmptySection(String),
    #[error("status section holds neither DONE nor CONTINUE")]
    AmbiguousStatus,
}

fn strip_bold(s: &str) -> (&str, bool) {
    for m in ["**", "__"] {
        if let Some(rest) = s.strip_prefix(m) {
            return (rest, true);
        }
    }
    (s, false)
}

/// Recognizes a section header line such as `### DDx List:`,
/// `###Pivot :`, `**Conclusion:**` or `### **Primary Actions**:`.
/// Returns the section and any text following the colon.
pub fn match_header(line: &str) -> Option<(Section, &str)> {
    let t = line.trim();
    let hashes = t.len() - t.trim_start_matches('#').len();
    let t = t[hashes..].trim_start();
    let (t, bold) = strip_bold(t);
    if hashes == 0 && !bold {
        return None;
    }
    let t = t.trim_start();
    let lower = t.to_ascii_lowercase();
    for section in Section::ALL {
        for alias in section.aliases() {
            if !lower.starts_with(alias) {
                continue;
            }
            let rest = &t[alias.len()..];
            if rest.chars().next().is_some_and(|c| c.is_alphanumeric()) {
                continue;
            }
            let rest = rest.trim_start();
            let (rest, _) = strip_bold(rest);
            let rest = rest.trim_start();
            let (rest, had_colon) = match rest.strip_prefix(':') {
                Some(r) => (r, true),
                None => (rest, false),
            };
            let (rest, _) = strip_bold(rest.trim_start());
            if !had_colon && !rest.trim().is_empty() {
                continue;
            }
            return Some((section, rest.trim()));
        }
    }
    None
}

/// Splits a reply into raw section bodies keyed by section. The first
/// occurrence of a header wins; a repeated header's body is dropped.
pub fn split_sections(raw: &str) -> Vec<(Section, String)> {
    let mut out: Vec<(Section, Vec<String>)> = Vec::new();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some((section, rest)) = match_header(line) {
            if out.iter().any(|(s, _)| *s == section) {
                current = None;
                continue;
            }
            out.push((section, Vec::new()));
            let idx = out.len() - 1;
            if !rest.is_empty() {
                out[idx].1.push(rest.to_owned());
            }
            current = Some(idx);
        } else if let Some(idx) = current {
            out[idx].1.push(line.to_owned());
        }
    }
    out.into_iter()
        .map(|(s, lines)| (s, lines.join("\n").trim().to_owned()))
        .collect()
}

static ENUMERATED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s+(.*)$").unwrap());
static STATUS_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(DONE|CONTINUE)\b").unwrap());

/// Numbered or bulleted items; unnumbered lines continue the previous
/// item. A body without any enumerator yields one item per line.
fn list_items(body: &str) -> Vec<String> {
    let lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    if !lines.iter().any(|l| ENUMERATED.is_match(l)) {
        return lines.iter().map(|l| l.trim().to_owned()).collect();
    }
    let mut items: Vec<String> = Vec::new();
    for line in lines {
        match ENUMERATED.captures(line) {
            Some(c) => items.push(c[1].trim().to_owned()),
            None => match items.last_mut() {
                Some(last) => {
                    last.push(' ');
                    last.push_str(line.trim());
                }
                None => items.push(line.trim().to_owned()),
            },
        }
    }
    items
}

fn split_dash(item: &str) -> (String, String) {
    for sep in [" - ", " – ", " — "] {
        if let Some((a, b)) = item.split_once(sep) {
            return (clean_label(a), b.trim().to_owned());
        }
    }
    (clean_label(item), String::new())
}

fn clean_label(s: &str) -> String {
    s.trim().trim_matches(|c| c == '*' || c == '_').trim().to_owned()
}

pub fn parse_ddx(body: &str) -> Vec<DdxEntry> {
    list_items(body)
        .iter()
        .map(|item| split_dash(item))
        .filter(|(d, _)| !normalize(d).is_empty())
        .enumerate()
        .map(|(i, (diagnosis, rationale))| DdxEntry {
            rank: i as u32 + 1,
            diagnosis,
            rationale,
        })
        .collect()
}

fn is_not_required(body: &str) -> bool {
    let n = normalize(body);
    n.is_empty() || n == "not required" || n == "none" || n.starts_with("not required ")
}

pub fn parse_actions(body: &str) -> Vec<ActionItem> {
    if is_not_required(body) {
        return Vec::new();
    }
    list_items(body)
        .iter()
        .map(|item| split_dash(item))
        .filter(|(t, _)| !normalize(t).is_empty())
        .map(|(test, purpose)| ActionItem { test, purpose })
        .collect()
}

pub fn parse_additional(body: &str) -> AdditionalInfo {
    if is_not_required(body) {
        return AdditionalInfo::NotRequired;
    }
    let items = list_items(body)
        .into_iter()
        .map(|item| match item.split_once(':') {
            Some((c, r)) => InfoRequest {
                category: clean_label(c),
                request: r.trim().to_owned(),
            },
            None => InfoRequest {
                category: String::new(),
                request: item,
            },
        })
        .filter(|r| !normalize(&r.request).is_empty())
        .collect();
    AdditionalInfo::Requests(items)
}

fn last_status_token(text: &str) -> Option<DiagnosticStatus> {
    STATUS_TOKEN.find_iter(text).last().map(|m| {
        if m.as_str().eq_ignore_ascii_case("done") {
            DiagnosticStatus::Done
        } else {
            DiagnosticStatus::Continue
        }
    })
}

/// Parses an agent reply.
///
/// Structured replies need all seven sections (in any order); DDx, status
/// and conclusion must be non-empty. Free-form replies only yield a
/// status (CONTINUE when absent), a conclusion, ordered tests and, when
/// present, a numbered differential; the whole text is kept as the chain
/// of thought.
pub fn parse_turn_reply(raw: &str, mode: TurnMode) -> Result<TurnRecord, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::EmptyReply);
    }
    match mode {
        TurnMode::Structured => parse_structured(raw),
        TurnMode::FreeForm => Ok(parse_free_form(raw)),
    }
}

fn parse_structured(raw: &str) -> Result<TurnRecord, ParseError> {
    let sections = split_sections(raw);
    let body = |s: Section| -> Result<&str, ParseError> {
        sections
            .iter()
            .find(|(k, _)| *k == s)
            .map(|(_, b)| b.as_str())
            .ok_or_else(|| ParseError::MissingSection(s.header().to_owned()))
    };
    for s in Section::ALL {
        body(s)?;
    }
    let nonempty = |s: Section| -> Result<&str, ParseError> {
        let b = body(s)?;
        if b.trim().is_empty() {
            Err(ParseError::EmptySection(s.header().to_owned()))
        } else {
            Ok(b)
        }
    };
    let ddx = parse_ddx(nonempty(Section::DdxList)?);
    if ddx.is_empty() {
        return Err(ParseError::EmptySection(Section::DdxList.header().to_owned()));
    }
    let status = last_status_token(nonempty(Section::DiagnosticStatus)?).ok_or(ParseError::AmbiguousStatus)?;
    let conclusion = nonempty(Section::Conclusion)?.to_owned();
    Ok(TurnRecord {
        turn_index: 1,
        observation_digest: String::new(),
        chain_of_thought: body(Section::ChainOfThought)?.to_owned(),
        ddx,
        pivot: body(Section::Pivot)?.to_owned(),
        primary_actions: parse_actions(body(Section::PrimaryActions)?),
        additional_info: parse_additional(body(Section::AdditionalInformation)?),
        status,
        conclusion,
        raw_reply: raw.to_owned(),
        mode: TurnMode::Structured,
    })
}

static FF_STATUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s#*_]*(?:diagnostic\s+)?status[\s*_]*:?[\s*_]*(.*)$").unwrap());
static FF_CONCLUSION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s#*_]*(?:final\s+)?conclusion[\s*_]*:[\s*_]*(.*)$").unwrap());
static FF_TESTS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s#*_]*tests?(?:\s+ordered)?[\s*_]*:[\s*_]*(.*)$").unwrap());
static FF_DIFFERENTIAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s#*_]*(?:differential|ddx)\b[^:]*:?\s*$").unwrap());
static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+[.)]\s+(.*)$").unwrap());

/// Value on a labelled line, or the next non-empty line when the label
/// stands alone.
fn labelled_value(lines: &[&str], idx: usize, inline: &str) -> String {
    let inline = inline.trim().trim_matches(|c| c == '*' || c == '_').trim();
    if !inline.is_empty() {
        return inline.to_owned();
    }
    lines[idx + 1..]
        .iter()
        .map(|l| l.trim())
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_owned()
}

fn parse_free_form(raw: &str) -> TurnRecord {
    let lines: Vec<&str> = raw.lines().collect();
    let mut status = None;
    let mut conclusion = None;
    let mut tests_line = None;
    let mut ddx_body = None;
    for (i, line) in lines.iter().enumerate() {
        if let Some(c) = FF_STATUS.captures(line) {
            let value = labelled_value(&lines, i, &c[1]);
            if let Some(s) = last_status_token(&value) {
                status = Some(s);
            }
        } else if let Some(c) = FF_CONCLUSION.captures(line) {
            conclusion = Some(labelled_value(&lines, i, &c[1]));
        } else if let Some(c) = FF_TESTS.captures(line) {
            tests_line = Some(c[1].trim().to_owned());
        } else if ddx_body.is_none() && FF_DIFFERENTIAL.is_match(line) {
            let numbered: Vec<&str> = lines[i + 1..]
                .iter()
                .skip_while(|l| l.trim().is_empty())
                .take_while(|l| NUMBERED.is_match(l))
                .copied()
                .collect();
            if !numbered.is_empty() {
                ddx_body = Some(numbered.join("\n"));
            }
        }
    }

    let primary_actions = match tests_line {
        Some(t) if !is_not_required(&t) => split_compound(&t)
            .into_iter()
            .map(|test| ActionItem {
                test,
                purpose: String::new(),
            })
            .collect(),
        Some(_) => Vec::new(),
        None => split_sections(raw)
            .into_iter()
            .find(|(s, _)| *s == Section::PrimaryActions)
            .map(|(_, b)| parse_actions(&b))
            .unwrap_or_default(),
    };
    let conclusion = conclusion.filter(|c| !c.is_empty()).unwrap_or_else(|| {
        lines
            .iter()
            .rev()
            .map(|l| l.trim())
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_owned()
    });

    TurnRecord {
        turn_index: 1,
        observation_digest: String::new(),
        chain_of_thought: raw.trim().to_owned(),
        ddx: ddx_body.map(|b| parse_ddx(&b)).unwrap_or_default(),
        pivot: String::new(),
        primary_actions,
        additional_info: AdditionalInfo::NotRequired,
        status: status.unwrap_or(DiagnosticStatus::Continue),
        conclusion,
        raw_reply: raw.to_owned(),
        mode: TurnMode::FreeForm,
    }
}

pub fn render_ddx(ddx: &[DdxEntry]) -> String {
    ddx.iter()
        .map(|d| {
            if d.rationale.is_empty() {
                format!("{}. {}", d.rank, d.diagnosis)
            } else {
                format!("{}. {} - {}", d.rank, d.diagnosis, d.rationale)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_actions(actions: &[ActionItem]) -> String {
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if a.purpose.is_empty() {
                format!("{}. {}", i + 1, a.test)
            } else {
                format!("{}. {} - {}", i + 1, a.test, a.purpose)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_additional(info: &AdditionalInfo) -> String {
    match info {
        AdditionalInfo::NotRequired => "Not required.".to_owned(),
        AdditionalInfo::Requests(items) => items
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.category.is_empty() {
                    format!("{}. {}", i + 1, r.request)
                } else {
                    format!("{}. {}: {}", i + 1, r.category, r.request)
                }
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// Section bodies of a structured record, rendered back to text.
pub fn render_sections(record: &TurnRecord) -> Vec<(Section, String)> {
    vec![
        (Section::ChainOfThought, record.chain_of_thought.clone()),
        (Section::DdxList, render_ddx(&record.ddx)),
        (Section::Pivot, record.pivot.clone()),
        (Section::PrimaryActions, render_actions(&record.primary_actions)),
        (Section::AdditionalInformation, render_additional(&record.additional_info)),
        (Section::DiagnosticStatus, record.status.to_string()),
        (Section::Conclusion, record.conclusion.clone()),
    ]
}

/// Canonical structured reply text for a record.
pub fn render_reply(record: &TurnRecord) -> String {
    render_sections(record)
        .into_iter()
        .map(|(s, body)| format!("### {}:\n{}", s.header(), body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("extraction reply is not a JSON array of strings: {0}")]
    ExtractionParseError(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Which tests a turn ordered.
#[derive(Clone, Copy)]
pub enum TestExtractor<'a> {
    Deterministic { include_additional: bool },
    Chat {
        backend: &'a dyn ChatBackend,
        model_id: &'a str,
        params: SamplingParams,
    },
}

impl Default for TestExtractor<'_> {
    fn default() -> Self {
        TestExtractor::Deterministic {
            include_additional: true,
        }
    }
}

/// Primary-action tests followed by additional-information requests,
/// compound entries split, deduplicated after normalization.
pub fn ordered_tests(record: &TurnRecord, include_additional: bool) -> Vec<String> {
    let mut raw: Vec<&str> = record.primary_actions.iter().map(|a| a.test.as_str()).collect();
    if include_additional {
        if let AdditionalInfo::Requests(items) = &record.additional_info {
            raw.extend(items.iter().map(|r| r.request.as_str()));
        }
    }
    dedup_tests(raw.into_iter().flat_map(split_compound))
}

pub fn dedup_tests(tests: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    tests
        .into_iter()
        .filter(|t| {
            let n = normalize(t);
            !n.is_empty() && seen.insert(n)
        })
        .collect()
}

pub fn extract_tests(
    record: &TurnRecord,
    extractor: &TestExtractor<'_>,
    ctx: &RequestContext,
) -> Result<Vec<String>, ExtractionError> {
    match extractor {
        TestExtractor::Deterministic { include_additional } => Ok(ordered_tests(record, *include_additional)),
        TestExtractor::Chat {
            backend,
            model_id,
            params,
        } => {
            let req = ChatRequest::new(
                *model_id,
                vec![
                    ChatMessage::system(EXTRACT_TESTS_PROMPT.trim_end()),
                    ChatMessage::user(record.raw_reply.clone()),
                ],
                *params,
            );
            let reply = backend.complete(&req, &ctx.clone().with_purpose(Purpose::ExtractTests))?;
            let items: Vec<String> = serde_json::from_str(strip_code_fence(&reply))
                .map_err(|e| ExtractionError::ExtractionParseError(e.to_string()))?;
            Ok(dedup_tests(items))
        }
    }
}
