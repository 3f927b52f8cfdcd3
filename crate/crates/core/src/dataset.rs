//! Chat-format training records built from filtered trajectories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::ClinicalEnvironment;
use crate::filter::{Decision, FilterOutcome, RemovedTurn};
use crate::gateway::ChatMessage;
use crate::prompts::{render_turn_prompt, HistoryTurn};
use crate::rollout::Trajectory;
use crate::turn::{parse_turn_reply, TurnMode, TurnRecord};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Teacher label reserved for trajectories reconstructed from case reports.
pub const GOLD_LABEL: &str = "gold";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub case_id: String,
    pub node_path: String,
    pub teacher_label: String,
    pub mode: TurnMode,
    /// `distilled` or `gold`.
    pub source: String,
    pub decision: Decision,
    pub original_turns: Vec<u32>,
    pub removed_turns: Vec<RemovedTurn>,
    pub pipeline_version: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub messages: Vec<ChatMessage>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("{node}: stored reply no longer parses to its record")]
    RenderMismatch { node: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn same_content(a: &TurnRecord, b: &TurnRecord) -> bool {
    let strip = |r: &TurnRecord| TurnRecord {
        turn_index: 0,
        observation_digest: String::new(),
        ..r.clone()
    };
    strip(a) == strip(b)
}

/// One record per kept trajectory: the system prompt, then a user prompt
/// and the teacher's reply for every retained turn. Prompts are rendered
/// from the retained turns alone and turns are renumbered from 1, so the
/// first retained turn always opens with the initial prompt. Discarded
/// outcomes emit nothing.
pub fn emit(
    traj: &Trajectory,
    outcome: &FilterOutcome,
    env: &ClinicalEnvironment,
    window_size: usize,
    seed: u64,
) -> Result<Vec<TrainingRecord>, EmitError> {
    if outcome.decision == Decision::Discarded {
        return Ok(Vec::new());
    }
    let kept: Vec<_> = outcome
        .retained_turns
        .iter()
        .filter_map(|&t| traj.steps.get(t as usize - 1))
        .collect();
    let mut renumbered: Vec<TurnRecord> = Vec::with_capacity(kept.len());
    let mut messages = Vec::with_capacity(1 + 2 * kept.len());
    for (i, step) in kept.iter().enumerate() {
        let reparsed = parse_turn_reply(&step.record.raw_reply, step.record.mode)
            .ok()
            .filter(|r| same_content(r, &step.record));
        if reparsed.is_none() {
            return Err(EmitError::RenderMismatch {
                node: step.node_id.clone(),
            });
        }
        let history: Vec<HistoryTurn<'_>> = renumbered
            .iter()
            .zip(&kept)
            .map(|(record, s)| HistoryTurn {
                record,
                answers: &s.oracle_answers,
            })
            .collect();
        let prompt = render_turn_prompt(env, &history, window_size, traj.mode);
        if i == 0 {
            messages.push(ChatMessage::system(prompt.system));
        }
        messages.push(ChatMessage::user(prompt.user));
        messages.push(ChatMessage::assistant(step.record.raw_reply.clone()));
        renumbered.push(TurnRecord {
            turn_index: i as u32 + 1,
            ..step.record.clone()
        });
    }
    let source = if traj.teacher_label == GOLD_LABEL { "gold" } else { "distilled" };
    Ok(vec![TrainingRecord {
        messages,
        provenance: Provenance {
            case_id: traj.case_id.clone(),
            node_path: traj.node_path.clone(),
            teacher_label: traj.teacher_label.clone(),
            mode: traj.mode,
            source: source.to_owned(),
            decision: outcome.decision,
            original_turns: outcome.retained_turns.clone(),
            removed_turns: outcome.removed_turns.clone(),
            pipeline_version: PIPELINE_VERSION.to_owned(),
            seed,
        },
    }])
}

pub fn sort_records(records: &mut [TrainingRecord]) {
    records.sort_by(|a, b| {
        (&a.provenance.case_id, &a.provenance.node_path).cmp(&(&b.provenance.case_id, &b.provenance.node_path))
    });
}

pub fn to_jsonl(records: &[TrainingRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::new();
    for r in &sorted {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes records sorted by case and node path, one JSON object per line.
pub fn write_jsonl(records: &[TrainingRecord], path: impl AsRef<Path>) -> Result<usize, EmitError> {
    let path = path.as_ref();
    let io = |source| EmitError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(to_jsonl(records).as_bytes()).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(records.len())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TrainingRecord>, EmitError> {
    let path = path.as_ref();
    let io = |source| EmitError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| EmitError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionStats {
    pub records: usize,
    pub free_form_records: usize,
    pub free_form_fraction: f64,
    pub assistant_turns: usize,
}

pub fn emission_stats(records: &[TrainingRecord]) -> EmissionStats {
    let free = records.iter().filter(|r| r.provenance.mode == TurnMode::FreeForm).count();
    EmissionStats {
        records: records.len(),
        free_form_records: free,
        free_form_fraction: if records.is_empty() {
            0.0
        } else {
            free as f64 / records.len() as f64
        },
        assistant_turns: records.iter().map(|r| r.provenance.original_turns.len()).sum(),
    }
}

/// True when any message mentions the ground-truth diagnosis verbatim,
/// ignoring case.
pub fn leaks_ground_truth(record: &TrainingRecord, ground_truth: &str) -> bool {
    let needle = ground_truth.trim().to_lowercase();
    !needle.is_empty()
        && record
            .messages
            .iter()
            .any(|m| m.content.to_lowercase().contains(&needle))
}
