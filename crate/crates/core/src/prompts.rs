//! Prompt templates and their rendering from trajectory state.
//!
//! Templates live under `templates/` as plain text with `{placeholder}`
//! slots. Substitution is single-pass, so braces inside case text are
//! never re-expanded.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::environment::{ClinicalEnvironment, OracleAnswer};
use crate::text::normalize;
use crate::turn::{TurnMode, TurnRecord};

const SYSTEM_TEMPLATE: &str = include_str!("../templates/system.txt");
const INITIAL_TEMPLATE: &str = include_str!("../templates/initial.txt");
const FOLLOWUP_TEMPLATE: &str = include_str!("../templates/followup.txt");
const FREE_FORM_INITIAL_TEMPLATE: &str = include_str!("../templates/free_form_initial.txt");
const FREE_FORM_FOLLOWUP_TEMPLATE: &str = include_str!("../templates/free_form_followup.txt");
const ORACLE_TEMPLATE: &str = include_str!("../templates/oracle.txt");
pub const EXTRACT_TESTS_PROMPT: &str = include_str!("../templates/extract_tests.txt");
pub const MATCH_TESTS_PROMPT: &str = include_str!("../templates/match_tests.txt");
pub const JUDGE_DIAGNOSIS_PROMPT: &str = include_str!("../templates/judge_diagnosis.txt");
pub const EXTRACT_CASE_PROMPT: &str = include_str!("../templates/extract_case.txt");
pub const FORMAT_REMINDER: &str = include_str!("../templates/format_reminder.txt");

pub const EMPTY_BLOCK: &str = "None yet";
pub const NO_NEW_RESULTS: &str = "No new results this turn.";
pub const DEFAULT_WINDOW_SIZE: usize = 2;

pub fn system_prompt() -> &'static str {
    SYSTEM_TEMPLATE.trim_end()
}

/// Replaces `{key}` for every listed key in one left-to-right pass.
/// Unknown `{...}` sequences are copied through untouched.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// A prior turn together with the oracle answers its orders produced.
#[derive(Debug, Clone, Copy)]
pub struct HistoryTurn<'a> {
    pub record: &'a TurnRecord,
    pub answers: &'a [OracleAnswer],
}

pub fn render_initial_prompt(env: &ClinicalEnvironment) -> Prompt {
    Prompt {
        system: system_prompt().to_owned(),
        user: render_template(INITIAL_TEMPLATE.trim_end(), &[("case", &env.initial_observation)]),
    }
}

pub fn render_free_form_initial_prompt(env: &ClinicalEnvironment) -> Prompt {
    Prompt {
        system: system_prompt().to_owned(),
        user: render_template(FREE_FORM_INITIAL_TEMPLATE.trim_end(), &[("case", &env.initial_observation)]),
    }
}

/// Cumulative test blocks: every test answered AVAILABLE so far, and every
/// test confirmed UNAVAILABLE, each listed once in first-seen order.
pub fn cumulative_blocks(history: &[HistoryTurn<'_>], new_answers: &[OracleAnswer]) -> (String, String) {
    let mut seen = HashSet::new();
    let mut done = Vec::new();
    let mut unavailable = Vec::new();
    let all = history.iter().flat_map(|h| h.answers.iter()).chain(new_answers);
    for answer in all {
        if !seen.insert(normalize(&answer.requested_name)) {
            continue;
        }
        match (&answer.result, answer.is_available()) {
            (Some(result), true) => done.push(format!("- {}: {}", answer.requested_name, result)),
            _ => unavailable.push(format!("- {}", answer.requested_name)),
        }
    }
    let block = |lines: Vec<String>| {
        if lines.is_empty() {
            EMPTY_BLOCK.to_owned()
        } else {
            lines.join("\n")
        }
    };
    (block(done), block(unavailable))
}

/// Reasoning of the last `window_size` turns.
pub fn recent_turns_block(history: &[HistoryTurn<'_>], window_size: usize) -> String {
    let start = history.len().saturating_sub(window_size.max(1));
    history[start..]
        .iter()
        .map(|h| render_turn_reasoning(h.record))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_turn_reasoning(record: &TurnRecord) -> String {
    match record.mode {
        TurnMode::Structured => format!(
            "[Turn {}]\nChain of Thought:\n{}\n\nDDx List:\n{}\n\nPivot:\n{}\n\nDiagnostic Status: {}\nConclusion: {}",
            record.turn_index,
            record.chain_of_thought.trim(),
            crate::turn::render_ddx(&record.ddx),
            record.pivot.trim(),
            record.status,
            record.conclusion.trim()
        ),
        TurnMode::FreeForm => format!("[Turn {}]\n{}", record.turn_index, record.chain_of_thought.trim()),
    }
}

pub fn render_oracle_results(answers: &[OracleAnswer]) -> String {
    if answers.is_empty() {
        return NO_NEW_RESULTS.to_owned();
    }
    answers
        .iter()
        .map(|a| format!("- {}", a.render()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_followup_with(
    template: &str,
    env: &ClinicalEnvironment,
    history: &[HistoryTurn<'_>],
    new_answers: &[OracleAnswer],
    window_size: usize,
) -> Prompt {
    let (done, unavailable) = cumulative_blocks(history, new_answers);
    let recent = recent_turns_block(history, window_size);
    let results = render_oracle_results(new_answers);
    let window = window_size.max(1).to_string();
    let user = render_template(
        template.trim_end(),
        &[
            ("case", &env.initial_observation),
            ("done_tests_block", &done),
            ("unavailable_tests_block", &unavailable),
            ("window_size", &window),
            ("recent_turns_block", &recent),
            ("oracle_results", &results),
        ],
    );
    Prompt {
        system: system_prompt().to_owned(),
        user,
    }
}

pub fn render_followup_prompt(
    env: &ClinicalEnvironment,
    history: &[HistoryTurn<'_>],
    new_answers: &[OracleAnswer],
    window_size: usize,
) -> Prompt {
    render_followup_with(FOLLOWUP_TEMPLATE, env, history, new_answers, window_size)
}

pub fn render_free_form_followup_prompt(
    env: &ClinicalEnvironment,
    history: &[HistoryTurn<'_>],
    new_answers: &[OracleAnswer],
    window_size: usize,
) -> Prompt {
    render_followup_with(FREE_FORM_FOLLOWUP_TEMPLATE, env, history, new_answers, window_size)
}

/// Picks the initial or follow-up template for the given mode. New results
/// are the answers produced by the last history turn.
pub fn render_turn_prompt(
    env: &ClinicalEnvironment,
    history: &[HistoryTurn<'_>],
    window_size: usize,
    mode: TurnMode,
) -> Prompt {
    match (history.last(), mode) {
        (None, TurnMode::Structured) => render_initial_prompt(env),
        (None, TurnMode::FreeForm) => render_free_form_initial_prompt(env),
        (Some(last), TurnMode::Structured) => render_followup_prompt(env, history, last.answers, window_size),
        (Some(last), TurnMode::FreeForm) => render_free_form_followup_prompt(env, history, last.answers, window_size),
    }
}

pub fn unavailable_message(test_name: &str) -> String {
    format!(
        "{test_name}: This test is currently UNAVAILABLE due to equipment maintenance or lack of specialized personnel. You must proceed with clinical diagnosis or alternative available testing."
    )
}

pub fn render_oracle_prompt(env: &ClinicalEnvironment) -> String {
    let anc = env
        .test_menu
        .iter()
        .map(|t| format!("- {}: {}", t.name, t.result))
        .collect::<Vec<_>>()
        .join("\n");
    render_template(
        ORACLE_TEMPLATE.trim_end(),
        &[("full_case_summary", &env.initial_observation), ("anc", &anc)],
    )
}
