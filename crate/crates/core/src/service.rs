//! Authenticated operations over the store. Both the HTTP API and the CLI
//! go through [`Workspace`], so they observe identical numbers.
//!
//! Everything here is blocking. Provider calls (embeddings, LLM) are made
//! outside the per-project lock.

use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EmbeddingBackend, LlmBackend, Settings};
use crate::embedding::{CachedEmbedder, Embedder, HttpEmbedder, HttpEmbedderConfig, TermFrequencyEmbedder};
use crate::llm::{
    Assistant, HttpChatConfig, HttpChatProvider, LlmError, LlmProvider, MockLlmProvider, PromptSettings,
    RequestLog, SuggestionSet, UNGROUPED,
};
use crate::metrics::{compute_report, MetricsError, MetricsReport};
use crate::model::{
    match_key, CodeDecision, CodeGroup, CoderId, DecisionProvenance, Granularity, OpenCodeEntry, Phase,
    ProjectId, Roster, UnitId,
};
use crate::segmenter::{import_document, DocumentFormat, SegmentError, SegmentationConfig};
use crate::store::{CommitOutcome, ProjectSummary, Store, StoreError};
use crate::workflow::{GateStatus, Mutation, OpenCodeInput, ProjectState, ProjectView, ValidationRules, WorkflowError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{0}")]
    Validation(String),
}

impl From<StoreError> for Error {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Workflow(w) => Error::Workflow(w),
            other => Error::Store(other),
        }
    }
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Workflow(w) => match w {
                WorkflowError::GateNotPassed { .. } => "GateNotPassed",
                WorkflowError::MissingDecisions(_) => "MissingDecisions",
                WorkflowError::NothingToUndo => "NothingToUndo",
                WorkflowError::WrongPhase(_) | WorkflowError::InvalidTransition { .. } => "WrongPhase",
                WorkflowError::UnknownUnit(_) => "UnknownUnit",
                WorkflowError::NotOwner { .. } => "Forbidden",
                WorkflowError::CorruptLog(_) => "Internal",
                _ => "ValidationFailed",
            },
            Error::Store(s) => match s {
                StoreError::NotFound(_) => "NotFound",
                StoreError::VersionConflict { .. } => "VersionConflict",
                StoreError::StorageUnavailable(_) => "StorageUnavailable",
                StoreError::Corrupt(_) | StoreError::Workflow(_) => "Internal",
            },
            Error::Segment(_) | Error::Validation(_) => "ValidationFailed",
            Error::Metrics(m) => match m {
                MetricsError::ProviderUnavailable(_) => "ProviderUnavailable",
                MetricsError::GateNotPassed { .. } => "GateNotPassed",
                _ => "ValidationFailed",
            },
            Error::Llm(l) => match l {
                LlmError::ProviderUnavailable(_) => "ProviderUnavailable",
                LlmError::UnparseableResponse(_) | LlmError::HallucinatedCode(_) => "UnparseableResponse",
                _ => "ValidationFailed",
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewProject {
    pub name: String,
    /// Document contents.
    pub source: String,
    #[serde(default = "default_format")]
    pub format: DocumentFormat,
    #[serde(default)]
    pub csv_column: Option<String>,
    pub granularity: Granularity,
    /// `[lead, second]`.
    pub coders: [CoderId; 2],
}

fn default_format() -> DocumentFormat {
    DocumentFormat::Txt
}

/// Acknowledgement of a successful mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub version: u64,
    pub sequence_no: u64,
    pub duplicate: bool,
}

impl From<CommitOutcome> for Ack {
    fn from(c: CommitOutcome) -> Self {
        Self {
            version: c.version,
            sequence_no: c.sequence_no,
            duplicate: c.duplicate,
        }
    }
}

/// Optimistic-concurrency and idempotency parameters of a write.
#[derive(Debug, Clone, Default)]
pub struct WriteOptions {
    pub expected_version: Option<u64>,
    pub mutation_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderProgress {
    pub coder: CoderId,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub version: u64,
    pub phase: Phase,
    pub coders: [CoderProgress; 2],
    pub gate_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub unit_id: UnitId,
    pub index: usize,
    pub text: String,
    pub entry_a: Option<OpenCodeEntry>,
    pub entry_b: Option<OpenCodeEntry>,
    pub similarity: f64,
    pub decision: Option<CodeDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSnapshot {
    pub version: u64,
    pub coders: Roster,
    /// Ordered by `report.ranking`.
    pub rows: Vec<ComparisonRow>,
    pub report: MetricsReport,
    pub gate: GateStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsView {
    pub version: u64,
    pub groups: Vec<CodeGroup>,
    pub ungrouped: Vec<UnitId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDraft {
    pub version: u64,
    pub groups: Vec<CodeGroup>,
    pub ungrouped: Vec<UnitId>,
    pub suggestion: SuggestionSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportUnit {
    pub index: usize,
    pub unit_id: UnitId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportDecision {
    pub unit_id: UnitId,
    pub unit_index: usize,
    pub decision: String,
    pub provenance: DecisionProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportGroup {
    pub name: String,
    pub decisions: Vec<ExportDecision>,
}

/// Final codebook: groups with their decisions, plus the unit texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookExport {
    pub project_id: ProjectId,
    pub name: String,
    pub granularity: Granularity,
    pub version: u64,
    pub groups: Vec<ExportGroup>,
    pub ungrouped: Vec<ExportDecision>,
    pub units: Vec<ExportUnit>,
}

impl CodebookExport {
    /// `group,decision,unit_index,provenance`, one row per decision; decisions
    /// outside every group are listed under `Ungrouped`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "decision", "unit_index", "provenance"])
            .expect("writing to a Vec cannot fail");
        let grouped = self
            .groups
            .iter()
            .flat_map(|g| g.decisions.iter().map(move |d| (g.name.as_str(), d)));
        let loose = self.ungrouped.iter().map(|d| (UNGROUPED, d));
        for (group, d) in grouped.chain(loose) {
            w.write_record([
                group,
                d.decision.as_str(),
                &d.unit_index.to_string(),
                &d.provenance.to_string(),
            ])
            .expect("writing to a Vec cannot fail");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("csv output is UTF-8")
    }

    pub fn decision_count(&self) -> usize {
        self.groups.iter().map(|g| g.decisions.len()).sum::<usize>() + self.ungrouped.len()
    }
}

pub struct Workspace {
    store: Arc<Store>,
    assistant: Assistant,
    embedder: Arc<dyn Embedder>,
    rules: ValidationRules,
    threshold: f64,
}

impl Workspace {
    pub fn new(
        store: Arc<Store>,
        llm: Arc<dyn LlmProvider>,
        embedder: Arc<dyn Embedder>,
        settings: &Settings,
    ) -> Self {
        let log: Arc<dyn RequestLog> = store.clone();
        Self {
            assistant: Assistant::new(
                llm,
                log,
                PromptSettings {
                    model_id: settings.llm.model.clone(),
                    temperature: settings.llm.temperature,
                },
            ),
            store,
            embedder,
            rules: ValidationRules {
                max_code_words: settings.max_code_words(),
            },
            threshold: settings.threshold,
        }
    }

    /// Builds providers as configured; credentials come from the environment.
    pub fn from_settings(store: Arc<Store>, settings: &Settings) -> Result<Self> {
        let llm: Arc<dyn LlmProvider> = match settings.llm.provider {
            LlmBackend::Mock => Arc::new(MockLlmProvider::new()),
            LlmBackend::OpenaiCompatible => Arc::new(HttpChatProvider::new(HttpChatConfig {
                base_url: settings.llm.base_url.clone(),
                api_key: std::env::var(&settings.llm.api_key_env).ok(),
                timeout: Duration::from_secs(settings.llm.timeout_secs),
            })?),
        };
        let embedder: Arc<dyn Embedder> = match settings.embedding.provider {
            EmbeddingBackend::TermFrequency => Arc::new(TermFrequencyEmbedder),
            EmbeddingBackend::OpenaiCompatible => Arc::new(CachedEmbedder::new(HttpEmbedder::new(
                HttpEmbedderConfig {
                    base_url: settings.embedding.base_url.clone(),
                    model: settings.embedding.model.clone(),
                    api_key: std::env::var(&settings.embedding.api_key_env).ok(),
                    timeout: Duration::from_secs(settings.embedding.timeout_secs),
                },
            )?)),
        };
        Ok(Self::new(store, llm, embedder, settings))
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn default_threshold(&self) -> f64 {
        self.threshold
    }

    pub fn create_project(&self, actor: &CoderId, new: NewProject, mutation_id: Option<String>) -> Result<ProjectView> {
        if !new.coders.contains(actor) {
            return Err(Error::Validation("the creating coder must be on the roster".into()));
        }
        if new.name.trim().is_empty() {
            return Err(Error::Validation("project name is empty".into()));
        }
        let [lead, second] = new.coders;
        let config = SegmentationConfig::new(new.granularity);
        let units = if new.source.is_empty() {
            Vec::new()
        } else {
            match import_document(new.source.as_bytes(), new.format, new.csv_column.as_deref(), &config)?
                .into_units(&config)
            {
                Ok(units) => units,
                Err(SegmentError::EmptyInput) => Vec::new(),
                Err(e) => return Err(e.into()),
            }
        };
        let mutation = ProjectState::plan_create(
            ProjectId::generate(),
            new.name.trim(),
            new.source.is_empty(),
            units,
            new.granularity,
            Roster { lead, second },
            Utc::now(),
        )?;
        let state = self.store.create_project(actor, mutation_id, mutation)?;
        Ok(state.view_for(actor)?)
    }

    pub fn list_projects(&self, actor: &CoderId) -> Vec<ProjectSummary> {
        self.store.list_projects(actor)
    }

    pub fn project(&self, actor: &CoderId, project: &ProjectId) -> Result<ProjectView> {
        Ok(self.store.load_project(project, actor)?)
    }

    fn commit(
        &self,
        actor: &CoderId,
        project: &ProjectId,
        opts: WriteOptions,
        plan: impl FnOnce(&ProjectState) -> std::result::Result<Mutation, WorkflowError>,
    ) -> Result<Ack> {
        Ok(self
            .store
            .commit(project, actor, opts.mutation_id, opts.expected_version, plan)?
            .into())
    }

    pub fn submit_open_code(
        &self,
        actor: &CoderId,
        project: &ProjectId,
        unit: &UnitId,
        input: &OpenCodeInput,
        opts: WriteOptions,
    ) -> Result<(Ack, OpenCodeEntry)> {
        let rules = self.rules;
        let ack = self.commit(actor, project, opts, |s| {
            s.plan_submit_open_code(actor, actor, unit, input, &rules, Utc::now())
        })?;
        let entry = self
            .store
            .with_state(project, actor, |s| s.entry(actor, unit).map(|e| e.cloned()))??
            .ok_or_else(|| Error::Validation("entry vanished".into()))?;
        Ok((ack, entry))
    }

    pub fn progress(&self, actor: &CoderId, project: &ProjectId) -> Result<ProgressReport> {
        Ok(self.store.with_state(project, actor, progress_of)?)
    }

    pub fn coder_progress(&self, actor: &CoderId, project: &ProjectId, coder: &CoderId) -> Result<f64> {
        Ok(self.store.with_state(project, actor, |s| s.coder_progress(coder))??)
    }

    pub fn gate(&self, actor: &CoderId, project: &ProjectId) -> Result<GateStatus> {
        Ok(self.store.with_state(project, actor, ProjectState::comparison_gate)?)
    }

    pub fn advance_phase(&self, actor: &CoderId, project: &ProjectId, to: Phase, opts: WriteOptions) -> Result<Ack> {
        self.commit(actor, project, opts, |s| s.plan_advance(to))
    }

    /// Full state for shared-phase reads; refuses while still open coding.
    fn shared_state(&self, actor: &CoderId, project: &ProjectId) -> Result<ProjectState> {
        self.store
            .with_state(project, actor, |s| {
                if s.partner_visible() {
                    Ok(s.clone())
                } else {
                    let g = s.comparison_gate();
                    Err(WorkflowError::GateNotPassed {
                        lead_progress: g.lead_progress,
                        second_progress: g.second_progress,
                    })
                }
            })?
            .map_err(Error::from)
    }

    fn report_for(&self, state: &ProjectState, threshold: f64, force: bool) -> Result<MetricsReport> {
        let id = &state.project.project_id;
        if !force {
            if let Some(r) = self.store.latest_report(id)? {
                if r.computed_at_version == state.version() && r.threshold == threshold {
                    return Ok(r);
                }
            }
        }
        let report = compute_report(&state.code_pairs(), state.version(), self.embedder.as_ref(), threshold)?;
        self.store.save_report(id, &report)?;
        Ok(report)
    }

    /// Recomputes and stores the metrics report (the Calculate action).
    pub fn calculate(&self, actor: &CoderId, project: &ProjectId, threshold: Option<f64>) -> Result<MetricsReport> {
        let state = self.shared_state(actor, project)?;
        self.report_for(&state, threshold.unwrap_or(self.threshold), true)
    }

    /// Report for the current version, reusing a stored one when it matches.
    pub fn report(&self, actor: &CoderId, project: &ProjectId, threshold: Option<f64>) -> Result<MetricsReport> {
        let state = self.shared_state(actor, project)?;
        self.report_for(&state, threshold.unwrap_or(self.threshold), false)
    }

    pub fn snapshot(&self, actor: &CoderId, project: &ProjectId, threshold: Option<f64>) -> Result<ComparisonSnapshot> {
        let state = self.shared_state(actor, project)?;
        let report = self.report_for(&state, threshold.unwrap_or(self.threshold), false)?;
        let rows = report
            .ranking
            .iter()
            .map(|unit| {
                let i = state.unit_index(unit)?;
                Ok(ComparisonRow {
                    unit_id: unit.clone(),
                    index: i,
                    text: state.units[i].text.clone(),
                    entry_a: state.entries[0][i].clone(),
                    entry_b: state.entries[1][i].clone(),
                    similarity: report.score_of(unit).unwrap_or_default(),
                    decision: state.decisions[i].clone(),
                })
            })
            .collect::<std::result::Result<Vec<_>, WorkflowError>>()?;
        Ok(ComparisonSnapshot {
            version: state.version(),
            coders: state.project.coders.clone(),
            rows,
            gate: state.comparison_gate(),
            report,
        })
    }

    pub fn finalize_decision(
        &self,
        actor: &CoderId,
        project: &ProjectId,
        unit: &UnitId,
        text: &str,
        provenance: DecisionProvenance,
        opts: WriteOptions,
    ) -> Result<(Ack, CodeDecision)> {
        let ack = self.commit(actor, project, opts, |s| s.plan_finalize_decision(unit, text, provenance))?;
        let decision = self
            .store
            .with_state(project, actor, |s| s.unit_index(unit).map(|i| s.decisions[i].clone()))??
            .ok_or_else(|| Error::Validation("decision vanished".into()))?;
        Ok((ack, decision))
    }

    /// Returns the number of decisions now replacing the open codes.
    pub fn replace_all(&self, actor: &CoderId, project: &ProjectId, opts: WriteOptions) -> Result<(Ack, usize)> {
        let ack = self.commit(actor, project, opts, ProjectState::plan_replace_all)?;
        Ok((ack, self.store.with_state(project, actor, ProjectState::replaced_count)?))
    }

    /// Returns the number of decisions whose original codes were restored.
    pub fn undo_all(&self, actor: &CoderId, project: &ProjectId, opts: WriteOptions) -> Result<(Ack, usize)> {
        let before = self.store.with_state(project, actor, ProjectState::replaced_count)?;
        let ack = self.commit(actor, project, opts, ProjectState::plan_undo_all)?;
        Ok((ack, if ack.duplicate { 0 } else { before }))
    }

    pub fn groups(&self, actor: &CoderId, project: &ProjectId) -> Result<GroupsView> {
        let state = self.shared_state(actor, project)?;
        Ok(GroupsView {
            version: state.version(),
            groups: state.groups.clone(),
            ungrouped: state.ungrouped(),
        })
    }

    pub fn save_groups(&self, actor: &CoderId, project: &ProjectId, groups: &[CodeGroup], opts: WriteOptions) -> Result<Ack> {
        self.commit(actor, project, opts, |s| s.plan_save_groups(groups))
    }

    /// Asks the model to group the distinct decisions and maps its answer
    /// back onto units. Nothing is persisted.
    pub fn ai_groups(&self, actor: &CoderId, project: &ProjectId) -> Result<GroupDraft> {
        let state = self.shared_state(actor, project)?;
        if state.phase() != Phase::Grouping {
            return Err(WorkflowError::WrongPhase(state.phase()).into());
        }
        let mut distinct: Vec<String> = Vec::new();
        for d in state.decisions.iter().flatten() {
            if !distinct.iter().any(|x| match_key(x) == match_key(&d.decision_text)) {
                distinct.push(d.decision_text.clone());
            }
        }
        let suggestion = self.assistant.suggest_groups(&distinct)?;
        let units_with = |text: &str| -> Vec<UnitId> {
            let key = match_key(text);
            state
                .decisions
                .iter()
                .flatten()
                .filter(|d| match_key(&d.decision_text) == key)
                .map(|d| d.unit_id.clone())
                .collect()
        };
        let groups = suggestion
            .groups
            .iter()
            .map(|g| CodeGroup {
                name: g.name.clone(),
                members: g.members.iter().flat_map(|m| units_with(m)).collect(),
            })
            .collect();
        let mut ungrouped: Vec<UnitId> = suggestion.ungrouped.iter().flat_map(|m| units_with(m)).collect();
        ungrouped.sort_by_key(|u| state.unit_index(u).unwrap_or(usize::MAX));
        Ok(GroupDraft {
            version: state.version(),
            groups,
            ungrouped,
            suggestion,
        })
    }

    fn unit_text(&self, actor: &CoderId, project: &ProjectId, unit: &UnitId) -> Result<String> {
        Ok(self
            .store
            .with_state(project, actor, |s| s.unit(unit).map(|u| u.text.clone()))??)
    }

    pub fn suggest_open_codes(&self, actor: &CoderId, project: &ProjectId, unit: &UnitId) -> Result<SuggestionSet> {
        let text = self.unit_text(actor, project, unit)?;
        Ok(self.assistant.suggest_open_codes(&text)?)
    }

    /// Top codes from the requesting coder's own codebook for this unit.
    pub fn suggest_relevant_codes(&self, actor: &CoderId, project: &ProjectId, unit: &UnitId) -> Result<SuggestionSet> {
        let (text, codebook) = self.store.with_state(project, actor, |s| {
            let text = s.unit(unit)?.text.clone();
            let codes: Vec<String> = s.codebook(actor)?.entries.into_iter().map(|e| e.code).collect();
            Ok::<_, WorkflowError>((text, codes))
        })??;
        Ok(self.assistant.suggest_relevant_codes(&text, &codebook)?)
    }

    pub fn suggest_decision(&self, actor: &CoderId, project: &ProjectId, unit: &UnitId) -> Result<SuggestionSet> {
        let state = self.shared_state(actor, project)?;
        let i = state.unit_index(unit)?;
        let pair = &state.code_pairs()[i];
        Ok(self
            .assistant
            .suggest_decision(&state.units[i].text, &pair.code_a, &pair.code_b)?)
    }

    pub fn export(&self, actor: &CoderId, project: &ProjectId) -> Result<CodebookExport> {
        let state = self.shared_state(actor, project)?;
        let decision_at = |unit: &UnitId| -> Option<ExportDecision> {
            let i = state.unit_index(unit).ok()?;
            state.decisions[i].as_ref().map(|d| ExportDecision {
                unit_id: unit.clone(),
                unit_index: i,
                decision: d.decision_text.clone(),
                provenance: d.provenance,
            })
        };
        Ok(CodebookExport {
            project_id: state.project.project_id.clone(),
            name: state.project.name.clone(),
            granularity: state.project.granularity,
            version: state.version(),
            groups: state
                .groups
                .iter()
                .map(|g| ExportGroup {
                    name: g.name.clone(),
                    decisions: g.members.iter().filter_map(decision_at).collect(),
                })
                .collect(),
            ungrouped: state.ungrouped().iter().filter_map(decision_at).collect(),
            units: state
                .units
                .iter()
                .map(|u| ExportUnit {
                    index: u.index,
                    unit_id: u.unit_id.clone(),
                    text: u.text.clone(),
                })
                .collect(),
        })
    }
}

pub fn progress_of(state: &ProjectState) -> ProgressReport {
    let gate = state.comparison_gate();
    let coders = &state.project.coders;
    ProgressReport {
        version: state.version(),
        phase: state.phase(),
        coders: [
            CoderProgress {
                coder: coders.lead.clone(),
                progress: gate.lead_progress,
            },
            CoderProgress {
                coder: coders.second.clone(),
                progress: gate.second_progress,
            },
        ],
        gate_enabled: gate.enabled,
    }
}
