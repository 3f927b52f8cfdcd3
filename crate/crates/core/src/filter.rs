//! Knowledge-graph trajectory metrics and the pruning rules built on them.
//!
//! DTC is the hop distance from the top hypothesis to the ground truth on
//! the disease graph. RAC is the mean, over diagnoses that entered or left
//! the linked differential, of the hop distance to the nearest test ordered
//! on the previous turn.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::ClinicalEnvironment;
use crate::graph::{Hops, KnowledgeGraph, Linker};
use crate::rollout::Trajectory;
use crate::turn::{ordered_tests, TurnRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    #[default]
    DtcRac,
    /// Keep a trajectory whole iff its final DTC is 0.
    Correctness,
    /// Keep everything.
    None,
}

impl std::str::FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dtc-rac" => Ok(FilterMode::DtcRac),
            "correctness" => Ok(FilterMode::Correctness),
            "none" => Ok(FilterMode::None),
            other => Err(format!("unknown filter mode {other:?} (dtc-rac, correctness, none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub rac_threshold: u32,
    pub unreachable_cap: u32,
    pub require_turn1_link: bool,
    /// Count additional-information requests as actions of a turn.
    pub actions_include_additional: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::DtcRac,
            rac_threshold: 3,
            unreachable_cap: 99,
            require_turn1_link: true,
            actions_include_additional: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.rac_threshold < 1 {
            return Err(FilterError::InvalidConfig("rac_threshold must be at least 1".into()));
        }
        if self.unreachable_cap < self.rac_threshold {
            return Err(FilterError::InvalidConfig("unreachable_cap must not be below rac_threshold".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("ground truth of case {0} does not link to the disease graph")]
    GroundTruthUnlinkable(String),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRole {
    Diagnosis,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFailure {
    pub turn_index: u32,
    pub text: String,
    pub role: LinkRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtcPoint {
    pub turn_index: u32,
    /// Exact distance; `None` when unreachable or unlinked.
    pub hops: Option<u32>,
    /// Distance with the cap applied.
    pub value: u32,
    pub linked: bool,
}

/// RAC as an exact fraction `total_hops / count`; `count == 0` means the
/// linked differential did not change and the value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RacPoint {
    pub turn_index: u32,
    pub total_hops: u64,
    pub count: u32,
}

impl RacPoint {
    pub fn new(turn_index: u32, total_hops: u64, count: u32) -> Self {
        Self {
            turn_index,
            total_hops,
            count,
        }
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total_hops as f64 / self.count as f64
        }
    }

    /// `value() > tau`, decided exactly.
    pub fn exceeds(&self, tau: u32) -> bool {
        self.total_hops > tau as u64 * self.count as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MetricSeries {
    pub trajectory_ref: String,
    pub dtc: Vec<DtcPoint>,
    pub rac: Vec<RacPoint>,
    pub link_failures: Vec<LinkFailure>,
}

impl MetricSeries {
    /// DTC value per turn `1..=turns`, `None` where no top hypothesis parsed.
    pub fn dtc_values(&self, turns: u32) -> Vec<Option<u32>> {
        (1..=turns)
            .map(|t| self.dtc.iter().find(|p| p.turn_index == t).map(|p| p.value))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    KeptFull,
    KeptTruncated,
    Discarded,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::KeptFull => "kept_full",
            Decision::KeptTruncated => "kept_truncated",
            Decision::Discarded => "discarded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    DtcTruncation,
    RacUngrounded,
    /// Correctness-only mode rejected the whole trajectory.
    NotCorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedTurn {
    pub turn_index: u32,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFlag {
    /// Turn 1 already named the right diagnosis, yet no later turn did.
    DiscardedDespiteCorrectInitial,
    SingleTurn,
    NoTurn1Differential,
    Turn1Unlinked,
    EndedInFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub decision: Decision,
    pub retained_turns: Vec<u32>,
    pub removed_turns: Vec<RemovedTurn>,
    pub t_star: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<FilterFlag>,
}

impl FilterOutcome {
    fn from_sets(total: u32, retained: Vec<u32>, removed: Vec<RemovedTurn>, t_star: Option<u32>) -> Self {
        let decision = if retained.is_empty() {
            Decision::Discarded
        } else if retained.len() as u32 == total {
            Decision::KeptFull
        } else {
            Decision::KeptTruncated
        };
        Self {
            decision,
            retained_turns: retained,
            removed_turns: removed,
            t_star,
            flags: Vec::new(),
        }
    }

    pub fn discard_all(total: u32, reason: RemovalReason) -> Self {
        let removed = (1..=total)
            .map(|turn_index| RemovedTurn { turn_index, reason })
            .collect();
        Self::from_sets(total, Vec::new(), removed, None)
    }

    pub fn keep_all(total: u32) -> Self {
        Self::from_sets(total, (1..=total).collect(), Vec::new(), None)
    }

    fn flag(&mut self, f: FilterFlag) {
        if !self.flags.contains(&f) {
            self.flags.push(f);
            self.flags.sort();
        }
    }

    fn total_turns(&self) -> u32 {
        (self.retained_turns.len() + self.removed_turns.len()) as u32
    }
}

fn link_id(graph: &KnowledgeGraph, linker: &Linker, text: &str) -> Option<String> {
    linker.link(graph, text).node_id
}

pub fn compute_dtc(
    traj: &Trajectory,
    disease_graph: &KnowledgeGraph,
    linker: &Linker,
    env: &ClinicalEnvironment,
    cap: u32,
) -> Result<(Vec<DtcPoint>, Vec<LinkFailure>), FilterError> {
    let gt = link_id(disease_graph, linker, &env.ground_truth_diagnosis)
        .ok_or_else(|| FilterError::GroundTruthUnlinkable(env.case_id.clone()))?;
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for record in traj.records() {
        let Some(top) = record.top_hypothesis() else {
            continue;
        };
        let (hops, linked) = match link_id(disease_graph, linker, top) {
            Some(id) => {
                let h = disease_graph.hop_distance(&id, &gt).expect("linked ids exist");
                (h.finite(), true)
            }
            None => {
                failures.push(LinkFailure {
                    turn_index: record.turn_index,
                    text: top.to_owned(),
                    role: LinkRole::Diagnosis,
                });
                (None, false)
            }
        };
        points.push(DtcPoint {
            turn_index: record.turn_index,
            hops,
            value: hops.unwrap_or(cap).min(cap),
            linked,
        });
    }
    Ok((points, failures))
}

fn linked_ddx(
    graph: &KnowledgeGraph,
    linker: &Linker,
    record: &TurnRecord,
    failures: &mut Vec<LinkFailure>,
) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for entry in &record.ddx {
        match link_id(graph, linker, &entry.diagnosis) {
            Some(id) => {
                set.insert(id);
            }
            None => failures.push(LinkFailure {
                turn_index: record.turn_index,
                text: entry.diagnosis.clone(),
                role: LinkRole::Diagnosis,
            }),
        }
    }
    set
}

/// RAC for every turn t >= 2 of a trajectory.
pub fn compute_rac(
    traj: &Trajectory,
    test_graph: &KnowledgeGraph,
    linker: &Linker,
    cap: u32,
    include_additional: bool,
) -> (Vec<RacPoint>, Vec<LinkFailure>) {
    let mut failures = Vec::new();
    let records: Vec<&TurnRecord> = traj.records().collect();
    let mut sets: Vec<BTreeSet<String>> = Vec::with_capacity(records.len());
    for r in &records {
        let set = linked_ddx(test_graph, linker, r, &mut failures);
        sets.push(set);
    }
    let mut points = Vec::new();
    for t in 1..records.len() {
        let prev = records[t - 1];
        let mut actions = Vec::new();
        for test in ordered_tests(prev, include_additional) {
            match link_id(test_graph, linker, &test) {
                Some(id) => actions.push(id),
                None => failures.push(LinkFailure {
                    turn_index: prev.turn_index,
                    text: test,
                    role: LinkRole::Action,
                }),
            }
        }
        let point = rac_point(records[t].turn_index, &sets[t - 1], &sets[t], &actions, test_graph, cap);
        points.push(point);
    }
    failures.sort_by(|a, b| (a.turn_index, a.role, &a.text).cmp(&(b.turn_index, b.role, &b.text)));
    failures.dedup();
    (points, failures)
}

/// RAC from linked node sets. An unlinked action contributes nothing to
/// the minimum beyond the cap, so only linked ids are passed in; with no
/// linked actions every changed diagnosis scores the cap.
pub fn rac_point(
    turn_index: u32,
    prev: &BTreeSet<String>,
    cur: &BTreeSet<String>,
    actions: &[String],
    graph: &KnowledgeGraph,
    cap: u32,
) -> RacPoint {
    let delta: Vec<&String> = prev.symmetric_difference(cur).collect();
    let mut total = 0u64;
    for d in &delta {
        let h = graph
            .min_hop_distance(d, actions.iter().map(String::as_str))
            .unwrap_or(Hops::Unreachable);
        total += h.capped(cap) as u64;
    }
    RacPoint::new(turn_index, total, delta.len() as u32)
}

/// Backward scan: t* is the latest turn in 2..=T whose DTC is no worse
/// than turn 1's. Turns after t* are truncated; without such a turn the
/// trajectory is discarded. Index i of `dtc` is turn i + 1; `None` marks a
/// turn without a usable hypothesis, which can never be t*.
pub fn prune_dtc(dtc: &[Option<u32>]) -> FilterOutcome {
    let total = dtc.len() as u32;
    let Some(Some(base)) = dtc.first().copied() else {
        return FilterOutcome::discard_all(total, RemovalReason::DtcTruncation);
    };
    let t_star = (2..=total)
        .rev()
        .find(|&t| dtc[t as usize - 1].is_some_and(|v| v <= base));
    match t_star {
        Some(ts) => {
            let removed = (ts + 1..=total)
                .map(|turn_index| RemovedTurn {
                    turn_index,
                    reason: RemovalReason::DtcTruncation,
                })
                .collect();
            FilterOutcome::from_sets(total, (1..=ts).collect(), removed, Some(ts))
        }
        None => FilterOutcome::discard_all(total, RemovalReason::DtcTruncation),
    }
}

/// Single pass over the turns retained by `prune_dtc`: each retained turn
/// t >= 2 whose RAC exceeds the threshold removes turn t - 1. Every
/// decision reads the original RAC values.
pub fn prune_rac(outcome: &FilterOutcome, rac: &[RacPoint], tau: u32) -> FilterOutcome {
    if outcome.decision == Decision::Discarded {
        return outcome.clone();
    }
    let by_turn: BTreeMap<u32, &RacPoint> = rac.iter().map(|p| (p.turn_index, p)).collect();
    let retained: BTreeSet<u32> = outcome.retained_turns.iter().copied().collect();
    let flagged: BTreeSet<u32> = retained
        .iter()
        .filter(|&&t| t >= 2 && by_turn.get(&t).is_some_and(|p| p.exceeds(tau)))
        .map(|&t| t - 1)
        .filter(|p| retained.contains(p))
        .collect();
    let kept: Vec<u32> = retained.iter().copied().filter(|t| !flagged.contains(t)).collect();
    let mut removed = outcome.removed_turns.clone();
    removed.extend(flagged.iter().map(|&turn_index| RemovedTurn {
        turn_index,
        reason: RemovalReason::RacUngrounded,
    }));
    removed.sort_by_key(|r| r.turn_index);
    let mut out = FilterOutcome::from_sets(outcome.total_turns(), kept, removed, outcome.t_star);
    out.flags = outcome.flags.clone();
    out
}

/// Correctness-only rule: the whole trajectory iff its last turn's DTC is 0.
pub fn prune_correctness(dtc: &[Option<u32>]) -> FilterOutcome {
    let total = dtc.len() as u32;
    if dtc.last().copied().flatten() == Some(0) {
        FilterOutcome::keep_all(total)
    } else {
        FilterOutcome::discard_all(total, RemovalReason::NotCorrect)
    }
}

/// Metrics and outcome for one trajectory.
pub fn filter_trajectory(
    traj: &Trajectory,
    env: &ClinicalEnvironment,
    disease_graph: &KnowledgeGraph,
    test_graph: &KnowledgeGraph,
    linker: &Linker,
    config: &FilterConfig,
) -> Result<(MetricSeries, FilterOutcome), FilterError> {
    let total = traj.len() as u32;
    let mut series = MetricSeries {
        trajectory_ref: format!("{}:{}", traj.case_id, traj.node_path),
        ..Default::default()
    };
    let mut outcome = if config.mode == FilterMode::None {
        FilterOutcome::keep_all(total)
    } else {
        let (dtc, mut failures) = compute_dtc(traj, disease_graph, linker, env, config.unreachable_cap)?;
        let (rac, rac_failures) = compute_rac(
            traj,
            test_graph,
            linker,
            config.unreachable_cap,
            config.actions_include_additional,
        );
        failures.extend(rac_failures);
        series.dtc = dtc;
        series.rac = rac;
        series.link_failures = failures;
        let values = series.dtc_values(total);
        match config.mode {
            FilterMode::Correctness => prune_correctness(&values),
            _ => {
                let turn1 = series.dtc.iter().find(|p| p.turn_index == 1);
                let mut o = match turn1 {
                    None => {
                        let mut o = FilterOutcome::discard_all(total, RemovalReason::DtcTruncation);
                        o.flag(FilterFlag::NoTurn1Differential);
                        o
                    }
                    Some(p) if !p.linked && config.require_turn1_link => {
                        let mut o = FilterOutcome::discard_all(total, RemovalReason::DtcTruncation);
                        o.flag(FilterFlag::Turn1Unlinked);
                        o
                    }
                    Some(_) => prune_dtc(&values),
                };
                if o.decision == Decision::Discarded && values.first() == Some(&Some(0)) && total > 1 {
                    o.flag(FilterFlag::DiscardedDespiteCorrectInitial);
                }
                prune_rac(&o, &series.rac, config.rac_threshold)
            }
        }
    };
    if total == 1 {
        outcome.flag(FilterFlag::SingleTurn);
    }
    if traj.ended_in_failure {
        outcome.flag(FilterFlag::EndedInFailure);
    }
    Ok((series, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RetentionStats {
    pub trajectories: usize,
    pub kept_full: usize,
    pub kept_truncated: usize,
    pub discarded: usize,
    pub kept_full_pct: f64,
    pub kept_truncated_pct: f64,
    pub discarded_pct: f64,
    pub total_turns: usize,
    pub retained_turns: usize,
    pub removed_by_reason: BTreeMap<RemovalReason, usize>,
    pub flags: BTreeMap<FilterFlag, usize>,
}

/// Decision percentages and turn-removal counts. Empty input gives zeros.
pub fn retention_stats<'a>(outcomes: impl IntoIterator<Item = &'a FilterOutcome>) -> RetentionStats {
    let mut s = RetentionStats::default();
    for o in outcomes {
        s.trajectories += 1;
        match o.decision {
            Decision::KeptFull => s.kept_full += 1,
            Decision::KeptTruncated => s.kept_truncated += 1,
            Decision::Discarded => s.discarded += 1,
        }
        s.total_turns += o.total_turns() as usize;
        s.retained_turns += o.retained_turns.len();
        for r in &o.removed_turns {
            *s.removed_by_reason.entry(r.reason).or_default() += 1;
        }
        for f in &o.flags {
            *s.flags.entry(*f).or_default() += 1;
        }
    }
    if s.trajectories > 0 {
        let pct = |n: usize| 100.0 * n as f64 / s.trajectories as f64;
        s.kept_full_pct = pct(s.kept_full);
        s.kept_truncated_pct = pct(s.kept_truncated);
        s.discarded_pct = pct(s.discarded);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[u32]) -> Vec<Option<u32>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn dtc_examples() {
        let o = prune_dtc(&some(&[3, 2, 1, 0]));
        assert_eq!((o.decision, o.t_star), (Decision::KeptFull, Some(4)));
        let o = prune_dtc(&some(&[2, 4, 3, 1, 5]));
        assert_eq!((o.decision, o.t_star), (Decision::KeptTruncated, Some(4)));
        assert_eq!(o.retained_turns, vec![1, 2, 3, 4]);
        assert_eq!(
            o.removed_turns,
            vec![RemovedTurn {
                turn_index: 5,
                reason: RemovalReason::DtcTruncation
            }]
        );
        let o = prune_dtc(&some(&[1, 2, 3]));
        assert_eq!(o.decision, Decision::Discarded);
        assert!(o.retained_turns.is_empty());
        assert_eq!(prune_dtc(&some(&[0])).decision, Decision::Discarded);
        assert_eq!(prune_dtc(&[Some(2), None, Some(3)]).decision, Decision::Discarded);
    }

    fn rac(points: &[(u32, u64, u32)]) -> Vec<RacPoint> {
        points.iter().map(|&(t, h, c)| RacPoint::new(t, h, c)).collect()
    }

    #[test]
    fn rac_examples() {
        let base = FilterOutcome::keep_all(3);
        let o = prune_rac(&base, &rac(&[(2, 1, 1), (3, 5, 2)]), 3);
        assert_eq!(o.decision, Decision::KeptFull);
        let o = prune_rac(&base, &rac(&[(2, 1, 1), (3, 4, 1)]), 3);
        assert_eq!(o.retained_turns, vec![1, 3]);
        let o = prune_rac(&base, &rac(&[(2, 5, 1), (3, 5, 1)]), 3);
        assert_eq!(o.retained_turns, vec![3]);
        assert_eq!(o.decision, Decision::KeptTruncated);
        // exactly at the threshold is kept
        let o = prune_rac(&base, &rac(&[(2, 6, 2)]), 3);
        assert_eq!(o.decision, Decision::KeptFull);
    }

    #[test]
    fn rac_only_over_dtc_retained_prefix() {
        let o = prune_dtc(&some(&[2, 1, 3]));
        assert_eq!(o.retained_turns, vec![1, 2]);
        // turn 3 was truncated, so its flag on turn 2 is moot
        let o = prune_rac(&o, &rac(&[(2, 0, 0), (3, 99, 1)]), 3);
        assert_eq!(o.retained_turns, vec![1, 2]);
    }

    #[test]
    fn correctness_mode() {
        assert_eq!(prune_correctness(&some(&[3, 0])).decision, Decision::KeptFull);
        assert_eq!(prune_correctness(&some(&[0, 1])).decision, Decision::Discarded);
    }

    #[test]
    fn stats_arithmetic() {
        let mut all = Vec::new();
        all.extend(std::iter::repeat_n(FilterOutcome::keep_all(2), 6));
        all.extend(std::iter::repeat_n(prune_dtc(&some(&[2, 1, 3])), 3));
        all.push(prune_dtc(&some(&[1, 2])));
        let s = retention_stats(&all);
        assert_eq!((s.kept_full_pct, s.kept_truncated_pct, s.discarded_pct), (60.0, 30.0, 10.0));
        assert_eq!(s.removed_by_reason[&RemovalReason::DtcTruncation], 3 + 2);
        assert_eq!(retention_stats(&[]), RetentionStats::default());
    }

    #[test]
    fn rac_point_exactness() {
        let p = RacPoint::new(2, 3, 2);
        assert_eq!(p.value(), 1.5);
        assert!(p.exceeds(1) && !p.exceeds(2));
        assert_eq!(RacPoint::new(2, 0, 0).value(), 0.0);
    }
}
