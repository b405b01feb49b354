//! The project aggregate and its three-phase state machine.
//!
//! Every change is expressed as a [`Mutation`]. `plan_*` methods validate a
//! request against the current state and return the mutation to record;
//! [`ProjectState::apply`] folds a recorded mutation into the state. Live
//! writes and log replay share `apply`, so they cannot drift apart.
//!
//! Phases only move forward: open coding → discussion (both coders at
//! 100%) → grouping (every unit has a decision).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::CodePair;
use crate::model::{
    normalize_code, word_count, Certainty, CodeDecision, CodeGroup, CodeSource, CodebookEntry,
    CoderId, DataUnit, DecisionProvenance, Granularity, IndividualCodebook, OpenCodeEntry, Phase,
    Project, ProjectId, ReplaceSnapshot, Roster, UnitId,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum WorkflowError {
    #[error("source document is empty")]
    EmptySource,
    #[error("a project needs two distinct coders")]
    DuplicateCoders,
    #[error("segmentation produced no units")]
    SegmentationYieldedZeroUnits,
    #[error("coder `{0}` is not on this project")]
    UnknownCoder(CoderId),
    #[error("unit `{0}` does not exist")]
    UnknownUnit(UnitId),
    #[error("keyword support `{0}` does not occur in the unit text")]
    KeywordNotInUnit(String),
    #[error("certainty {0} outside 1..=5")]
    CertaintyOutOfRange(i64),
    #[error("code has {words} words, limit is {limit}")]
    CodeTooLong { words: usize, limit: usize },
    #[error("codes cannot be cleared once the comparison is open")]
    ClearAfterGate,
    #[error("comparison gate not passed (lead {lead_progress:.3}, second {second_progress:.3})")]
    GateNotPassed {
        lead_progress: f64,
        second_progress: f64,
    },
    #[error("operation not allowed in phase {0}")]
    WrongPhase(Phase),
    #[error("cannot move from {from} to {to}")]
    InvalidTransition { from: Phase, to: Phase },
    #[error("decision text is empty")]
    EmptyDecision,
    #[error("units without a decision: {}", .0.iter().map(UnitId::as_str).collect::<Vec<_>>().join(", "))]
    MissingDecisions(Vec<UnitId>),
    #[error("no replaced decisions to undo")]
    NothingToUndo,
    #[error("invalid code groups: {0}")]
    InvalidGroups(String),
    #[error("coder `{actor}` may not write codes for `{owner}`")]
    NotOwner { actor: CoderId, owner: CoderId },
    #[error("event log is inconsistent: {0}")]
    CorruptLog(String),
}

/// Validation knobs that come from deployment config, not the project.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRules {
    /// Maximum words in an open code; `None` disables the check.
    pub max_code_words: Option<usize>,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            max_code_words: Some(10),
        }
    }
}

/// What a coder submits for one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenCodeInput {
    pub code_text: String,
    #[serde(default)]
    pub keyword_supports: Vec<String>,
    /// Raw certainty so out-of-range values surface as a typed error.
    #[serde(default)]
    pub certainty: Option<i64>,
    #[serde(default = "default_source")]
    pub source: CodeSource,
}

fn default_source() -> CodeSource {
    CodeSource::Manual
}

impl Default for OpenCodeInput {
    fn default() -> Self {
        Self {
            code_text: String::new(),
            keyword_supports: Vec::new(),
            certainty: None,
            source: CodeSource::Manual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mutation {
    ProjectCreated {
        project_id: ProjectId,
        name: String,
        granularity: Granularity,
        coders: Roster,
        units: Vec<String>,
        at: DateTime<Utc>,
    },
    OpenCodeSubmitted {
        entry: OpenCodeEntry,
    },
    PhaseAdvanced {
        to: Phase,
    },
    DecisionFinalized {
        unit_id: UnitId,
        decision_text: String,
        provenance: DecisionProvenance,
    },
    DecisionsReplaced,
    ReplacementsUndone,
    GroupsSaved {
        groups: Vec<CodeGroup>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateStatus {
    pub enabled: bool,
    pub lead_progress: f64,
    pub second_progress: f64,
}

/// Full materialized state of one project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project: Project,
    pub units: Vec<DataUnit>,
    /// `entries[slot][unit_index]`, slot 0 = lead, 1 = second.
    pub entries: [Vec<Option<OpenCodeEntry>>; 2],
    pub decisions: Vec<Option<CodeDecision>>,
    pub groups: Vec<CodeGroup>,
}

impl ProjectState {
    /// Validates a new project and returns its creation mutation.
    pub fn plan_create(
        project_id: ProjectId,
        name: &str,
        source_was_empty: bool,
        units: Vec<String>,
        granularity: Granularity,
        coders: Roster,
        at: DateTime<Utc>,
    ) -> Result<Mutation, WorkflowError> {
        if source_was_empty {
            return Err(WorkflowError::EmptySource);
        }
        if coders.lead == coders.second {
            return Err(WorkflowError::DuplicateCoders);
        }
        if units.is_empty() || units.iter().any(|u| u.trim().is_empty()) {
            return Err(WorkflowError::SegmentationYieldedZeroUnits);
        }
        Ok(Mutation::ProjectCreated {
            project_id,
            name: name.to_owned(),
            granularity,
            coders,
            units,
            at,
        })
    }

    /// Builds the initial state from a `ProjectCreated` mutation.
    pub fn from_created(mutation: &Mutation) -> Result<Self, WorkflowError> {
        let Mutation::ProjectCreated {
            project_id,
            name,
            granularity,
            coders,
            units,
            at,
        } = mutation
        else {
            return Err(WorkflowError::CorruptLog(
                "first event is not ProjectCreated".into(),
            ));
        };
        let units: Vec<DataUnit> = units
            .iter()
            .enumerate()
            .map(|(index, text)| DataUnit {
                unit_id: UnitId::for_index(index),
                project_id: project_id.clone(),
                index,
                text: text.clone(),
            })
            .collect();
        let n = units.len();
        Ok(Self {
            project: Project {
                project_id: project_id.clone(),
                name: name.clone(),
                granularity: *granularity,
                coders: coders.clone(),
                unit_ids: units.iter().map(|u| u.unit_id.clone()).collect(),
                phase: Phase::OpenCoding,
                version: 1,
                created_at: *at,
            },
            units,
            entries: [vec![None; n], vec![None; n]],
            decisions: vec![None; n],
            groups: Vec::new(),
        })
    }

    /// Rebuilds a state from a full mutation history.
    pub fn replay<'a>(mut log: impl Iterator<Item = &'a Mutation>) -> Result<Self, WorkflowError> {
        let first = log
            .next()
            .ok_or_else(|| WorkflowError::CorruptLog("empty log".into()))?;
        let mut state = Self::from_created(first)?;
        for m in log {
            state.apply(m)?;
        }
        Ok(state)
    }

    pub fn version(&self) -> u64 {
        self.project.version
    }

    pub fn phase(&self) -> Phase {
        self.project.phase
    }

    pub fn unit_index(&self, unit: &UnitId) -> Result<usize, WorkflowError> {
        self.project
            .unit_ids
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| WorkflowError::UnknownUnit(unit.clone()))
    }

    pub fn unit(&self, unit: &UnitId) -> Result<&DataUnit, WorkflowError> {
        Ok(&self.units[self.unit_index(unit)?])
    }

    pub fn slot_of(&self, coder: &CoderId) -> Result<usize, WorkflowError> {
        self.project
            .coders
            .slot(coder)
            .ok_or_else(|| WorkflowError::UnknownCoder(coder.clone()))
    }

    pub fn entry(&self, coder: &CoderId, unit: &UnitId) -> Result<Option<&OpenCodeEntry>, WorkflowError> {
        let slot = self.slot_of(coder)?;
        Ok(self.entries[slot][self.unit_index(unit)?].as_ref())
    }

    fn code_text(&self, slot: usize, index: usize) -> &str {
        self.entries[slot][index]
            .as_ref()
            .map_or("", |e| e.code_text.as_str())
    }

    fn coded_count(&self, slot: usize) -> usize {
        self.entries[slot]
            .iter()
            .filter(|e| e.as_ref().is_some_and(OpenCodeEntry::is_coded))
            .count()
    }

    fn fraction(&self, slot: usize) -> f64 {
        self.coded_count(slot) as f64 / self.units.len() as f64
    }

    /// Share of units the coder has given a non-empty code.
    pub fn coder_progress(&self, coder: &CoderId) -> Result<f64, WorkflowError> {
        Ok(self.fraction(self.slot_of(coder)?))
    }

    pub fn comparison_gate(&self) -> GateStatus {
        let n = self.units.len();
        GateStatus {
            enabled: self.coded_count(0) == n && self.coded_count(1) == n,
            lead_progress: self.fraction(0),
            second_progress: self.fraction(1),
        }
    }

    fn gate_error(&self) -> WorkflowError {
        let g = self.comparison_gate();
        WorkflowError::GateNotPassed {
            lead_progress: g.lead_progress,
            second_progress: g.second_progress,
        }
    }

    /// Whether each coder may read the partner's open codes.
    pub fn partner_visible(&self) -> bool {
        self.project.phase != Phase::OpenCoding
    }

    pub fn codebook(&self, coder: &CoderId) -> Result<IndividualCodebook, WorkflowError> {
        let slot = self.slot_of(coder)?;
        let mut entries: Vec<CodebookEntry> = Vec::new();
        for entry in self.entries[slot].iter().flatten().filter(|e| e.is_coded()) {
            let key = normalize_code(&entry.code_text);
            match entries.iter_mut().find(|e| e.normalized == key) {
                Some(existing) => existing.count += 1,
                None => entries.push(CodebookEntry {
                    code: entry.code_text.trim().to_owned(),
                    normalized: key,
                    count: 1,
                }),
            }
        }
        Ok(IndividualCodebook {
            coder_id: coder.clone(),
            entries,
        })
    }

    pub fn plan_submit_open_code(
        &self,
        actor: &CoderId,
        coder: &CoderId,
        unit: &UnitId,
        input: &OpenCodeInput,
        rules: &ValidationRules,
        at: DateTime<Utc>,
    ) -> Result<Mutation, WorkflowError> {
        let slot = self.slot_of(coder)?;
        self.slot_of(actor)?;
        if actor != coder {
            return Err(WorkflowError::NotOwner {
                actor: actor.clone(),
                owner: coder.clone(),
            });
        }
        let index = self.unit_index(unit)?;
        if self.project.phase == Phase::Grouping {
            return Err(WorkflowError::WrongPhase(Phase::Grouping));
        }
        let text = &self.units[index].text;
        if let Some(missing) = input
            .keyword_supports
            .iter()
            .find(|k| k.is_empty() || !text.contains(k.as_str()))
        {
            return Err(WorkflowError::KeywordNotInUnit(missing.clone()));
        }
        let certainty = input
            .certainty
            .map(|c| {
                u8::try_from(c)
                    .ok()
                    .and_then(Certainty::new)
                    .ok_or(WorkflowError::CertaintyOutOfRange(c))
            })
            .transpose()?;
        if let Some(limit) = rules.max_code_words {
            let words = word_count(&input.code_text);
            if words > limit {
                return Err(WorkflowError::CodeTooLong { words, limit });
            }
        }
        if input.code_text.trim().is_empty()
            && self.project.phase != Phase::OpenCoding
            && !self.code_text(slot, index).trim().is_empty()
        {
            return Err(WorkflowError::ClearAfterGate);
        }
        Ok(Mutation::OpenCodeSubmitted {
            entry: OpenCodeEntry {
                unit_id: unit.clone(),
                coder_id: coder.clone(),
                code_text: input.code_text.clone(),
                keyword_supports: input.keyword_supports.clone(),
                certainty,
                source: input.source,
                updated_at: at,
            },
        })
    }

    pub fn plan_advance(&self, to: Phase) -> Result<Mutation, WorkflowError> {
        let from = self.project.phase;
        match (from, to) {
            (Phase::OpenCoding, Phase::Discussion) => {
                if !self.comparison_gate().enabled {
                    return Err(self.gate_error());
                }
            }
            (Phase::Discussion, Phase::Grouping) => {
                let missing = self.missing_decisions();
                if !missing.is_empty() {
                    return Err(WorkflowError::MissingDecisions(missing));
                }
            }
            _ => return Err(WorkflowError::InvalidTransition { from, to }),
        }
        Ok(Mutation::PhaseAdvanced { to })
    }

    fn require_shared_phase(&self) -> Result<(), WorkflowError> {
        if self.project.phase == Phase::OpenCoding {
            return Err(self.gate_error());
        }
        Ok(())
    }

    pub fn missing_decisions(&self) -> Vec<UnitId> {
        self.decisions
            .iter()
            .zip(&self.project.unit_ids)
            .filter(|(d, _)| d.is_none())
            .map(|(_, u)| u.clone())
            .collect()
    }

    pub fn plan_finalize_decision(
        &self,
        unit: &UnitId,
        decision_text: &str,
        provenance: DecisionProvenance,
    ) -> Result<Mutation, WorkflowError> {
        self.require_shared_phase()?;
        self.unit_index(unit)?;
        if decision_text.trim().is_empty() {
            return Err(WorkflowError::EmptyDecision);
        }
        Ok(Mutation::DecisionFinalized {
            unit_id: unit.clone(),
            decision_text: decision_text.trim().to_owned(),
            provenance,
        })
    }

    pub fn plan_replace_all(&self) -> Result<Mutation, WorkflowError> {
        self.require_shared_phase()?;
        let missing = self.missing_decisions();
        if !missing.is_empty() {
            return Err(WorkflowError::MissingDecisions(missing));
        }
        Ok(Mutation::DecisionsReplaced)
    }

    pub fn plan_undo_all(&self) -> Result<Mutation, WorkflowError> {
        self.require_shared_phase()?;
        if !self.decisions.iter().flatten().any(|d| d.replaced) {
            return Err(WorkflowError::NothingToUndo);
        }
        Ok(Mutation::ReplacementsUndone)
    }

    pub fn plan_save_groups(&self, groups: &[CodeGroup]) -> Result<Mutation, WorkflowError> {
        if self.project.phase != Phase::Grouping {
            return Err(WorkflowError::WrongPhase(self.project.phase));
        }
        let mut seen = vec![false; self.units.len()];
        for group in groups {
            if group.name.trim().is_empty() {
                return Err(WorkflowError::InvalidGroups("group name is empty".into()));
            }
            for member in &group.members {
                let index = self.unit_index(member)?;
                if self.decisions[index].is_none() {
                    return Err(WorkflowError::InvalidGroups(format!(
                        "unit `{member}` has no decision"
                    )));
                }
                if std::mem::replace(&mut seen[index], true) {
                    return Err(WorkflowError::InvalidGroups(format!(
                        "unit `{member}` is in more than one group"
                    )));
                }
            }
        }
        Ok(Mutation::GroupsSaved {
            groups: groups.to_vec(),
        })
    }

    /// Units with a decision that belong to no group, in unit order.
    pub fn ungrouped(&self) -> Vec<UnitId> {
        self.project
            .unit_ids
            .iter()
            .zip(&self.decisions)
            .filter(|(u, d)| d.is_some() && !self.groups.iter().any(|g| g.members.contains(u)))
            .map(|(u, _)| u.clone())
            .collect()
    }

    fn restore_snapshot(&mut self, index: usize) {
        let Some(decision) = self.decisions[index].as_mut() else {
            return;
        };
        if let Some(snapshot) = decision.snapshot.take() {
            for (slot, text) in [(0, snapshot.coder_a), (1, snapshot.coder_b)] {
                if let Some(entry) = self.entries[slot][index].as_mut() {
                    entry.code_text = text;
                }
            }
        }
        decision.replaced = false;
    }

    pub fn apply(&mut self, mutation: &Mutation) -> Result<(), WorkflowError> {
        match mutation {
            Mutation::ProjectCreated { .. } => {
                return Err(WorkflowError::CorruptLog(
                    "ProjectCreated after creation".into(),
                ))
            }
            Mutation::OpenCodeSubmitted { entry } => {
                let slot = self.slot_of(&entry.coder_id)?;
                let index = self.unit_index(&entry.unit_id)?;
                self.entries[slot][index] = Some(entry.clone());
            }
            Mutation::PhaseAdvanced { to } => self.project.phase = *to,
            Mutation::DecisionFinalized {
                unit_id,
                decision_text,
                provenance,
            } => {
                let index = self.unit_index(unit_id)?;
                // A replaced unit gets its original codes back before the
                // new decision is recorded.
                self.restore_snapshot(index);
                self.decisions[index] = Some(CodeDecision {
                    unit_id: unit_id.clone(),
                    decision_text: decision_text.clone(),
                    provenance: *provenance,
                    replaced: false,
                    snapshot: None,
                });
            }
            Mutation::DecisionsReplaced => {
                for index in 0..self.units.len() {
                    let Some(decision) = self.decisions[index].as_mut() else {
                        continue;
                    };
                    if !decision.replaced {
                        let text = |slot: usize| {
                            self.entries[slot][index]
                                .as_ref()
                                .map_or(String::new(), |e| e.code_text.clone())
                        };
                        decision.snapshot = Some(ReplaceSnapshot {
                            coder_a: text(0),
                            coder_b: text(1),
                        });
                        decision.replaced = true;
                    }
                    let new_text = decision.decision_text.clone();
                    for slot in 0..2 {
                        if let Some(entry) = self.entries[slot][index].as_mut() {
                            entry.code_text = new_text.clone();
                        }
                    }
                }
            }
            Mutation::ReplacementsUndone => {
                for index in 0..self.units.len() {
                    self.restore_snapshot(index);
                }
            }
            Mutation::GroupsSaved { groups } => self.groups = groups.clone(),
        }
        self.project.version += 1;
        Ok(())
    }

    /// Number of decisions currently replaced.
    pub fn replaced_count(&self) -> usize {
        self.decisions.iter().flatten().filter(|d| d.replaced).count()
    }

    /// Both coders' codes per unit, in unit order.
    pub fn code_pairs(&self) -> Vec<CodePair> {
        (0..self.units.len())
            .map(|i| CodePair {
                unit_id: self.units[i].unit_id.clone(),
                code_a: self.code_text(0, i).to_owned(),
                code_b: self.code_text(1, i).to_owned(),
            })
            .collect()
    }

    /// Read model for one coder. Before the comparison opens the partner's
    /// entries are withheld entirely; only their progress is shown.
    pub fn view_for(&self, viewer: &CoderId) -> Result<ProjectView, WorkflowError> {
        let slot = self.slot_of(viewer)?;
        let partner = self.project.coders.at(1 - slot).clone();
        let visible = self.partner_visible();
        let gate = self.comparison_gate();
        Ok(ProjectView {
            project: self.project.clone(),
            units: self.units.clone(),
            own_entries: self.entries[slot].clone(),
            partner_entries: visible.then(|| self.entries[1 - slot].clone()),
            partner,
            decisions: if visible {
                self.decisions.clone()
            } else {
                vec![None; self.units.len()]
            },
            groups: self.groups.clone(),
            gate,
            own_codebook: self.codebook(viewer)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectView {
    pub project: Project,
    pub units: Vec<DataUnit>,
    pub own_entries: Vec<Option<OpenCodeEntry>>,
    pub partner: CoderId,
    /// Absent until the project leaves open coding.
    pub partner_entries: Option<Vec<Option<OpenCodeEntry>>>,
    pub decisions: Vec<Option<CodeDecision>>,
    pub groups: Vec<CodeGroup>,
    pub gate: GateStatus,
    pub own_codebook: IndividualCodebook,
}
