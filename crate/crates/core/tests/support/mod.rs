//! Test-only oracles and generators. Each oracle recomputes its quantity by
//! the most direct method available, independently of the library code.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use cqa_core::model::{CodeGroup, CoderId, DecisionProvenance, Granularity, Phase, ProjectId, Roster, UnitId};
use cqa_core::workflow::{Mutation, OpenCodeInput, ProjectState, ValidationRules};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Cohen's kappa from an explicit contingency table, in floating point.
/// `None` when expected agreement is 1.
pub fn kappa_oracle(a: &[String], b: &[String]) -> Option<f64> {
    let n = a.len() as f64;
    let mut table: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x.as_str(), y.as_str())).or_default() += 1.0;
    }
    let mut categories: Vec<&str> = a.iter().chain(b).map(String::as_str).collect();
    categories.sort();
    categories.dedup();
    let mut p_o = 0.0;
    let mut p_e = 0.0;
    for c in &categories {
        p_o += table.get(&(*c, *c)).copied().unwrap_or(0.0) / n;
        let row: f64 = categories.iter().map(|d| table.get(&(*c, *d)).copied().unwrap_or(0.0)).sum();
        let col: f64 = categories.iter().map(|d| table.get(&(*d, *c)).copied().unwrap_or(0.0)).sum();
        p_e += (row / n) * (col / n);
    }
    if (1.0 - p_e).abs() < 1e-12 {
        None
    } else {
        Some((p_o - p_e) / (1.0 - p_e))
    }
}

pub fn agreement_oracle(scores: &[f64], threshold: f64) -> (usize, usize) {
    let mut above = 0;
    for s in scores {
        if *s > threshold {
            above += 1;
        }
    }
    (above, scores.len())
}

/// Selection sort: repeatedly take the largest remaining score, earliest
/// position first among equals.
pub fn rank_oracle(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Cosine of raw term counts over lowercase alphanumeric words, with no
/// hashing; a text without words counts as one token.
pub fn term_cosine_oracle(a: &str, b: &str) -> f64 {
    fn counts(text: &str) -> HashMap<String, f64> {
        let mut m: HashMap<String, f64> = HashMap::new();
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            *m.entry(word.to_owned()).or_default() += 1.0;
        }
        if m.is_empty() {
            m.insert(lower.split_whitespace().collect::<Vec<_>>().join(" "), 1.0);
        }
        m
    }
    let (x, y) = (counts(a), counts(b));
    let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).copied().unwrap_or(0.0)).sum();
    let nx: f64 = x.values().map(|v| v * v).sum::<f64>().sqrt();
    let ny: f64 = y.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (nx * ny)).clamp(0.0, 1.0)
}

const FRAGMENTS: &[&str] = &[
    "alpha", "Beta", "gamma", "δέλτα", "e.g", "x", " ", " ", "  ", "\t", ".", ".", "!", "?", "...", "\n", "\n\n",
    "\r\n", "\\", "<br />", "\"", "'", ",", "42", "ü", "😀",
];

/// Random raw document text, including delimiters, odd symbols and CRLFs.
pub fn random_text(rng: &mut impl Rng) -> String {
    let len = rng.random_range(1..80);
    (0..len).map(|_| *FRAGMENTS.choose(rng).unwrap()).collect()
}

pub fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

pub fn roster() -> Roster {
    Roster {
        lead: CoderId::new("ann"),
        second: CoderId::new("bob"),
    }
}

pub fn new_state(units: &[&str]) -> ProjectState {
    let m = ProjectState::plan_create(
        ProjectId::new("p1"),
        "test",
        false,
        units.iter().map(|u| u.to_string()).collect(),
        Granularity::Paragraph,
        roster(),
        t0(),
    )
    .unwrap();
    ProjectState::from_created(&m).unwrap()
}

const WORDS: &[&str] = &["clear", "helpful", "dated", "practical", "dry", "honest", "short", "guide"];

/// Code text tagged with a coder-specific marker so leaks can be detected
/// by substring search.
fn random_code(rng: &mut impl Rng, marker: &str) -> String {
    match rng.random_range(0..10) {
        0 => String::new(),
        1 => format!("{marker} {}", ["word"; 11].join(" ")),
        _ => {
            let n = rng.random_range(1..4);
            let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
            format!("{marker} {}", words.join(" "))
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WorkflowRun {
    pub mutations: usize,
    pub final_phase: Option<Phase>,
    pub replace_checks: usize,
}

/// Random operation sequence against a fresh project, checking the
/// workflow invariants after every step.
pub fn drive_random_workflow(rng: &mut impl Rng, steps: usize) -> Result<WorkflowRun, String> {
    let mut replace_checks = 0;
    let unit_count = rng.random_range(1..5);
    let texts: Vec<String> = (0..unit_count)
        .map(|i| format!("unit {i} is clear and helpful but a little dated"))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut state = new_state(&refs);
    let coders = [state.project.coders.lead.clone(), state.project.coders.second.clone()];
    let markers = ["zqmarkann", "zqmarkbob"];
    let mut log = vec![ProjectState::plan_create(
        state.project.project_id.clone(),
        "test",
        false,
        texts.clone(),
        Granularity::Paragraph,
        state.project.coders.clone(),
        t0(),
    )
    .unwrap()];
    let rules = ValidationRules::default();
    for _ in 0..steps {
        let unit = UnitId::for_index(rng.random_range(0..unit_count + 1));
        let gate_before = state.comparison_gate().enabled;
        let plan: Result<Mutation, _> = match rng.random_range(0..20) {
            0..=9 => {
                let slot = rng.random_range(0..2);
                let actor = if rng.random_range(0..20) == 0 { &coders[1 - slot] } else { &coders[slot] };
                let input = OpenCodeInput {
                    code_text: random_code(rng, markers[slot]),
                    keyword_supports: match rng.random_range(0..4) {
                        0 => vec!["clear".into()],
                        1 => vec!["absent keyword".into()],
                        _ => vec![],
                    },
                    certainty: rng.random_bool(0.5).then(|| rng.random_range(0..7)),
                    ..OpenCodeInput::default()
                };
                state.plan_submit_open_code(actor, &coders[slot], &unit, &input, &rules, t0())
            }
            10..=11 => {
                let to = *[Phase::OpenCoding, Phase::Discussion, Phase::Grouping].choose(rng).unwrap();
                state.plan_advance(to)
            }
            12..=15 => {
                let provenance = *[DecisionProvenance::CoderA, DecisionProvenance::Custom].choose(rng).unwrap();
                let text = if rng.random_range(0..8) == 0 { "  ".to_owned() } else { random_code(rng, "decided") };
                state.plan_finalize_decision(&unit, &text, provenance)
            }
            16 => state.plan_replace_all(),
            17 => state.plan_undo_all(),
            _ => {
                let groups = vec![CodeGroup {
                    name: "theme".into(),
                    members: state
                        .project
                        .unit_ids
                        .iter()
                        .filter(|_| rng.random_bool(0.5))
                        .cloned()
                        .collect(),
                }];
                state.plan_save_groups(&groups)
            }
        };
        let Ok(mutation) = plan else { continue };

        if let Mutation::PhaseAdvanced { to: Phase::Discussion } = mutation {
            if !gate_before {
                return Err("entered discussion before the gate opened".into());
            }
        }
        if let Mutation::DecisionsReplaced = mutation {
            check_replace_undo(&state)?;
            replace_checks += 1;
        }
        let before = state.version();
        state.apply(&mutation).map_err(|e| e.to_string())?;
        if state.version() != before + 1 {
            return Err("version did not advance by one".into());
        }
        log.push(mutation);
        check_visibility(&state, &coders, &markers)?;
    }
    let replayed = ProjectState::replay(log.iter()).map_err(|e| e.to_string())?;
    if replayed != state {
        return Err("replay diverged from live state".into());
    }
    Ok(WorkflowRun {
        mutations: log.len(),
        final_phase: Some(state.phase()),
        replace_checks,
    })
}

/// `undo(replace(s))` must leave the open codes as `undo(s)` would, which
/// for a state with nothing replaced is `s` itself.
fn check_replace_undo(state: &ProjectState) -> Result<(), String> {
    let mut expected = state.clone();
    if state.replaced_count() > 0 {
        expected.apply(&Mutation::ReplacementsUndone).map_err(|e| e.to_string())?;
    }
    let mut round = state.clone();
    round.apply(&Mutation::DecisionsReplaced).map_err(|e| e.to_string())?;
    if round.replaced_count() == 0 {
        return Err("replace left nothing replaced".into());
    }
    round.apply(&Mutation::ReplacementsUndone).map_err(|e| e.to_string())?;
    let a = serde_json::to_vec(&round.entries).unwrap();
    let b = serde_json::to_vec(&expected.entries).unwrap();
    if a != b {
        return Err("replace followed by undo did not restore the open codes".into());
    }
    Ok(())
}

fn check_visibility(state: &ProjectState, coders: &[CoderId; 2], markers: &[&str; 2]) -> Result<(), String> {
    if state.comparison_gate().enabled && state.phase() != Phase::OpenCoding {
        return Ok(());
    }
    if state.phase() != Phase::OpenCoding {
        return Err("left open coding while the gate is closed".into());
    }
    for slot in 0..2 {
        let view = state.view_for(&coders[slot]).map_err(|e| e.to_string())?;
        let body = serde_json::to_string(&view).unwrap();
        let partner = 1 - slot;
        if body.contains(markers[partner]) {
            return Err(format!("{} saw {}'s code text before the gate", coders[slot], coders[partner]));
        }
        if body.contains(&format!("\"coder_id\":\"{}\"", coders[partner])) {
            return Err(format!("{} saw an entry of {}", coders[slot], coders[partner]));
        }
    }
    Ok(())
}
