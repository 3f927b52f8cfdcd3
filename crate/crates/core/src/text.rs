//! Text normalization and token-overlap scoring shared by entity linking,
//! the oracle matcher, and test matching.

use std::collections::{BTreeMap, BTreeSet};

/// Lowercases, drops apostrophes, turns every other non-alphanumeric
/// character into a space, and collapses whitespace.
///
/// Idempotent: `normalize(&normalize(s)) == normalize(s)`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if !ch.is_alphanumeric() {
            pending_space = true;
            continue;
        }
        // some lowercase mappings emit combining marks; treat those as separators
        for lc in ch.to_lowercase() {
            if lc.is_alphanumeric() {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(lc);
            } else {
                pending_space = true;
            }
        }
    }
    out
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Symmetric token-overlap ratio (Sørensen–Dice over token sets).
pub fn overlap_score(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let shared = a.intersection(b).count();
    2.0 * shared as f64 / (a.len() + b.len()) as f64
}

/// Splits a compound entry such as `"CBC, CMP, LFTs"` or `"CT/MRI"` on
/// commas, semicolons and slashes. Separators inside parentheses are kept.
pub fn split_compound(text: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '(' | '[' => {
                depth += 1;
                current.push(ch);
            }
            ')' | ']' => {
                depth = depth.saturating_sub(1);
                current.push(ch);
            }
            ',' | ';' | '/' if depth == 0 => {
                parts.push(std::mem::take(&mut current));
            }
            _ => current.push(ch),
        }
    }
    parts.push(current);
    parts
        .into_iter()
        .map(|p| p.trim().trim_end_matches('.').trim().to_owned())
        .filter(|p| !normalize(p).is_empty())
        .collect()
}

/// Name variants of a test or entity label: the full label, the label
/// with parenthetical content removed, and each parenthetical on its own.
/// `"Complete Blood Count (CBC)"` yields the full string,
/// `"Complete Blood Count"` and `"CBC"`.
pub fn name_variants(label: &str) -> Vec<String> {
    let mut variants = vec![label.trim().to_owned()];
    let mut outer = String::new();
    let mut inner = String::new();
    let mut depth = 0usize;
    let mut inners = Vec::new();
    for ch in label.chars() {
        match ch {
            '(' => {
                if depth == 0 {
                    inner.clear();
                } else {
                    inner.push(ch);
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    inners.push(std::mem::take(&mut inner));
                } else {
                    inner.push(ch);
                }
            }
            _ if depth > 0 => inner.push(ch),
            _ => outer.push(ch),
        }
    }
    for v in std::iter::once(outer).chain(inners) {
        let v = v.trim().to_owned();
        if !normalize(&v).is_empty() && !variants.iter().any(|e| normalize(e) == normalize(&v)) {
            variants.push(v);
        }
    }
    variants
}

/// Abbreviation table for clinical test names. Keys and expansions are
/// stored normalized; expansion happens token by token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymTable {
    expansions: BTreeMap<String, String>,
}

const BUILTIN_TEST_SYNONYMS: &[(&str, &str)] = &[
    ("abg", "arterial blood gas"),
    ("alt", "alanine aminotransferase"),
    ("ast", "aspartate aminotransferase"),
    ("bmp", "basic metabolic panel"),
    ("bnp", "brain natriuretic peptide"),
    ("cbc", "complete blood count"),
    ("cmp", "comprehensive metabolic panel"),
    ("crp", "c reactive protein"),
    ("csf", "cerebrospinal fluid"),
    ("ctpa", "ct pulmonary angiography"),
    ("cxr", "chest x ray"),
    ("ecg", "electrocardiogram"),
    ("ekg", "electrocardiogram"),
    ("egd", "esophagogastroduodenoscopy"),
    ("esr", "erythrocyte sedimentation rate"),
    ("hba1c", "hemoglobin a1c"),
    ("inr", "international normalized ratio"),
    ("lft", "liver function tests"),
    ("lfts", "liver function tests"),
    ("pft", "pulmonary function tests"),
    ("pfts", "pulmonary function tests"),
    ("tpo", "thyroid peroxidase"),
    ("tsh", "thyroid stimulating hormone"),
    ("ua", "urinalysis"),
];

impl Default for SynonymTable {
    fn default() -> Self {
        Self::from_pairs(BUILTIN_TEST_SYNONYMS.iter().copied())
    }
}

impl SynonymTable {
    pub fn empty() -> Self {
        Self {
            expansions: BTreeMap::new(),
        }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let expansions = pairs
            .into_iter()
            .map(|(abbr, full)| (normalize(abbr), normalize(full)))
            .collect();
        Self { expansions }
    }

    pub fn insert(&mut self, abbreviation: &str, expansion: &str) {
        self.expansions
            .insert(normalize(abbreviation), normalize(expansion));
    }

    /// Token set with every known abbreviation replaced by its expansion.
    pub fn expanded_tokens(&self, text: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for tok in normalize(text).split(' ').filter(|t| !t.is_empty()) {
            match self.expansions.get(tok) {
                Some(full) => out.extend(full.split(' ').map(str::to_owned)),
                None => {
                    out.insert(tok.to_owned());
                }
            }
        }
        out
    }
}

/// Scores a free-text test request against a labelled entry: 1.0 on a
/// normalized match of any name variant, else the best token-overlap
/// ratio between synonym-expanded variants.
#[derive(Debug, Clone, Default)]
pub struct TermMatcher {
    pub synonyms: SynonymTable,
}

impl TermMatcher {
    pub fn new(synonyms: SynonymTable) -> Self {
        Self { synonyms }
    }

    pub fn score(&self, request: &str, label: &str) -> f64 {
        let req_variants = name_variants(request);
        let label_variants = name_variants(label);
        let mut best = 0.0f64;
        for r in &req_variants {
            let rn = normalize(r);
            let rt = self.synonyms.expanded_tokens(r);
            for l in &label_variants {
                if rn == normalize(l) {
                    return 1.0;
                }
                best = best.max(overlap_score(&rt, &self.synonyms.expanded_tokens(l)));
            }
        }
        best
    }
}
