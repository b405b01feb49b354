//! Event-sourced persistence with a materialized current-state view.
//!
//! On-disk layout under the data directory:
//!
//! ```text
//! tokens.json                     bearer token -> coder id
//! llm_requests.jsonl              one RequestLogEntry per line
//! projects/<id>/events.jsonl      one EventRecord per line, sequence 1..
//! projects/<id>/snapshot.json     materialized ProjectState
//! projects/<id>/metrics.json      latest MetricsReport
//! ```
//!
//! Each project has one write lock; an event is flushed to disk before the
//! in-memory state changes and before the caller is acknowledged.
//! Readers that are not on a project's roster get `NotFound`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{RequestLog, RequestLogEntry};
use crate::metrics::MetricsReport;
use crate::model::{CoderId, Phase, ProjectId, Roster};
use crate::workflow::{Mutation, ProjectState, ProjectView, WorkflowError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("project `{0}` not found")]
    NotFound(ProjectId),
    #[error("version conflict: expected {expected}, current {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

fn unavailable(e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageUnavailable(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub project_id: ProjectId,
    pub sequence_no: u64,
    pub actor: CoderId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_id: Option<String>,
    pub mutation: Mutation,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitOutcome {
    pub sequence_no: u64,
    /// Project version after the commit.
    pub version: u64,
    /// The mutation id had been seen before; nothing was written.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub project_id: ProjectId,
    pub name: String,
    pub coders: Roster,
    pub phase: Phase,
    pub version: u64,
    pub unit_count: usize,
}

struct Slot {
    state: ProjectState,
    events: Vec<EventRecord>,
    mutation_ids: HashMap<String, u64>,
    report: Option<MetricsReport>,
}

impl Slot {
    fn new(state: ProjectState, events: Vec<EventRecord>) -> Self {
        let mutation_ids = events
            .iter()
            .filter_map(|e| e.mutation_id.clone().map(|id| (id, e.sequence_no)))
            .collect();
        Self {
            state,
            events,
            mutation_ids,
            report: None,
        }
    }
}

pub struct Store {
    root: Option<PathBuf>,
    projects: RwLock<HashMap<ProjectId, Arc<Mutex<Slot>>>>,
    tokens: Mutex<BTreeMap<String, CoderId>>,
    memory_log: Mutex<Vec<RequestLogEntry>>,
    log_write: Mutex<()>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            projects: RwLock::new(HashMap::new()),
            tokens: Mutex::new(BTreeMap::new()),
            memory_log: Mutex::new(Vec::new()),
            log_write: Mutex::new(()),
        }
    }

    /// Opens (creating if needed) a data directory and replays every project.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("projects")).map_err(unavailable)?;
        let mut projects = HashMap::new();
        for dir in fs::read_dir(root.join("projects")).map_err(unavailable)? {
            let dir = dir.map_err(unavailable)?.path();
            if !dir.join("events.jsonl").exists() {
                continue;
            }
            let events = read_events(&dir.join("events.jsonl"))?;
            let state = replay_records(&events)?;
            let mut slot = Slot::new(state, events);
            let metrics = dir.join("metrics.json");
            if metrics.exists() {
                let bytes = fs::read(&metrics).map_err(unavailable)?;
                slot.report = serde_json::from_slice(&bytes).ok();
            }
            projects.insert(slot.state.project.project_id.clone(), Arc::new(Mutex::new(slot)));
        }
        let store = Self {
            root: Some(root),
            projects: RwLock::new(projects),
            tokens: Mutex::new(BTreeMap::new()),
            memory_log: Mutex::new(Vec::new()),
            log_write: Mutex::new(()),
        };
        store.reload_tokens()?;
        Ok(store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn project_dir(&self, id: &ProjectId) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("projects").join(id.as_str()))
    }

    fn slot(&self, id: &ProjectId) -> Result<Arc<Mutex<Slot>>, StoreError> {
        self.projects
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    fn persist_event(&self, record: &EventRecord, state: &ProjectState) -> Result<(), StoreError> {
        let Some(dir) = self.project_dir(&record.project_id) else {
            return Ok(());
        };
        let mut line = serde_json::to_vec(record).map_err(unavailable)?;
        line.push(b'\n');
        let path = dir.join("events.jsonl");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(unavailable)?;
        let before = file.metadata().map_err(unavailable)?.len();
        if let Err(e) = file.write_all(&line).and_then(|_| file.sync_data()) {
            // Do not leave a torn line behind.
            let _ = file.set_len(before);
            return Err(unavailable(e));
        }
        write_atomic(&dir.join("snapshot.json"), &serde_json::to_vec_pretty(state).map_err(unavailable)?)
    }

    /// Records a new project from its `ProjectCreated` mutation.
    pub fn create_project(
        &self,
        actor: &CoderId,
        mutation_id: Option<String>,
        mutation: Mutation,
    ) -> Result<ProjectState, StoreError> {
        let state = ProjectState::from_created(&mutation)?;
        let id = state.project.project_id.clone();
        let record = EventRecord {
            project_id: id.clone(),
            sequence_no: 1,
            actor: actor.clone(),
            mutation_id,
            mutation,
            timestamp: Utc::now(),
        };
        let mut projects = self.projects.write();
        if projects.contains_key(&id) {
            return Err(StoreError::Corrupt(format!("project `{id}` already exists")));
        }
        if let Some(dir) = self.project_dir(&id) {
            fs::create_dir_all(&dir).map_err(unavailable)?;
        }
        self.persist_event(&record, &state)?;
        projects.insert(id, Arc::new(Mutex::new(Slot::new(state.clone(), vec![record]))));
        Ok(state)
    }

    /// Validates, persists and applies one mutation under the project lock.
    ///
    /// A repeated `mutation_id` is acknowledged with its original sequence
    /// number and writes nothing. `expected_version`, when given, must equal
    /// the current version.
    pub fn commit(
        &self,
        project_id: &ProjectId,
        actor: &CoderId,
        mutation_id: Option<String>,
        expected_version: Option<u64>,
        plan: impl FnOnce(&ProjectState) -> Result<Mutation, WorkflowError>,
    ) -> Result<CommitOutcome, StoreError> {
        let slot = self.slot(project_id)?;
        let mut slot = slot.lock();
        if !slot.state.project.coders.contains(actor) {
            return Err(StoreError::NotFound(project_id.clone()));
        }
        if let Some(seq) = mutation_id.as_ref().and_then(|id| slot.mutation_ids.get(id)) {
            return Ok(CommitOutcome {
                sequence_no: *seq,
                version: slot.state.version(),
                duplicate: true,
            });
        }
        let actual = slot.state.version();
        if let Some(expected) = expected_version {
            if expected != actual {
                return Err(StoreError::VersionConflict { expected, actual });
            }
        }
        let mutation = plan(&slot.state)?;
        let mut next = slot.state.clone();
        next.apply(&mutation)?;
        let record = EventRecord {
            project_id: project_id.clone(),
            sequence_no: next.version(),
            actor: actor.clone(),
            mutation_id: mutation_id.clone(),
            mutation,
            timestamp: Utc::now(),
        };
        self.persist_event(&record, &next)?;
        let sequence_no = record.sequence_no;
        if let Some(id) = mutation_id {
            slot.mutation_ids.insert(id, sequence_no);
        }
        slot.events.push(record);
        slot.state = next;
        Ok(CommitOutcome {
            sequence_no,
            version: sequence_no,
            duplicate: false,
        })
    }

    /// Runs `f` on the full state of a project the reader is on. Callers are
    /// responsible for withholding the partner's codes before the gate.
    pub(crate) fn with_state<T>(
        &self,
        project_id: &ProjectId,
        reader: &CoderId,
        f: impl FnOnce(&ProjectState) -> T,
    ) -> Result<T, StoreError> {
        let slot = self.slot(project_id)?;
        let slot = slot.lock();
        if !slot.state.project.coders.contains(reader) {
            return Err(StoreError::NotFound(project_id.clone()));
        }
        Ok(f(&slot.state))
    }

    /// The project as `reader` is allowed to see it.
    pub fn load_project(&self, project_id: &ProjectId, reader: &CoderId) -> Result<ProjectView, StoreError> {
        self.with_state(project_id, reader, |s| s.view_for(reader))?
            .map_err(StoreError::from)
    }

    pub fn list_projects(&self, coder: &CoderId) -> Vec<ProjectSummary> {
        let mut out: Vec<ProjectSummary> = self
            .projects
            .read()
            .values()
            .filter_map(|slot| {
                let slot = slot.lock();
                let p = &slot.state.project;
                p.coders.contains(coder).then(|| ProjectSummary {
                    project_id: p.project_id.clone(),
                    name: p.name.clone(),
                    coders: p.coders.clone(),
                    phase: p.phase,
                    version: p.version,
                    unit_count: p.unit_ids.len(),
                })
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name).then(a.project_id.cmp(&b.project_id)));
        out
    }

    pub fn project_ids(&self) -> Vec<ProjectId> {
        let mut ids: Vec<ProjectId> = self.projects.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Events as held in memory.
    pub fn events(&self, project_id: &ProjectId) -> Result<Vec<EventRecord>, StoreError> {
        Ok(self.slot(project_id)?.lock().events.clone())
    }

    /// Live state without visibility filtering, for administrative tools.
    pub fn admin_state(&self, project_id: &ProjectId) -> Result<ProjectState, StoreError> {
        Ok(self.slot(project_id)?.lock().state.clone())
    }

    /// Rebuilds a project from its durable log (the on-disk file when the
    /// store is directory-backed).
    pub fn replay(&self, project_id: &ProjectId) -> Result<ProjectState, StoreError> {
        let events = match self.project_dir(project_id) {
            Some(dir) => {
                self.slot(project_id)?;
                read_events(&dir.join("events.jsonl"))?
            }
            None => self.events(project_id)?,
        };
        replay_records(&events)
    }

    /// Whether replaying the log reproduces the live state byte for byte.
    pub fn verify_replay(&self, project_id: &ProjectId) -> Result<bool, StoreError> {
        let replayed = serde_json::to_vec(&self.replay(project_id)?).map_err(unavailable)?;
        let live = serde_json::to_vec(&self.admin_state(project_id)?).map_err(unavailable)?;
        Ok(replayed == live)
    }

    pub fn save_report(&self, project_id: &ProjectId, report: &MetricsReport) -> Result<(), StoreError> {
        let slot = self.slot(project_id)?;
        let mut slot = slot.lock();
        if let Some(dir) = self.project_dir(project_id) {
            write_atomic(
                &dir.join("metrics.json"),
                &serde_json::to_vec_pretty(report).map_err(unavailable)?,
            )?;
        }
        slot.report = Some(report.clone());
        Ok(())
    }

    pub fn latest_report(&self, project_id: &ProjectId) -> Result<Option<MetricsReport>, StoreError> {
        Ok(self.slot(project_id)?.lock().report.clone())
    }

    /// Provisions a new bearer token for `coder`.
    pub fn issue_token(&self, coder: &CoderId) -> Result<String, StoreError> {
        let token = uuid::Uuid::new_v4().simple().to_string();
        self.reload_tokens()?;
        let mut tokens = self.tokens.lock();
        tokens.insert(token.clone(), coder.clone());
        if let Some(root) = &self.root {
            write_atomic(
                &root.join("tokens.json"),
                &serde_json::to_vec_pretty(&*tokens).map_err(unavailable)?,
            )?;
        }
        Ok(token)
    }

    /// Looks a token up, re-reading the token file on a miss so tokens
    /// issued by another process are picked up.
    pub fn resolve_token(&self, token: &str) -> Option<CoderId> {
        if let Some(c) = self.tokens.lock().get(token) {
            return Some(c.clone());
        }
        self.reload_tokens().ok()?;
        self.tokens.lock().get(token).cloned()
    }

    fn reload_tokens(&self) -> Result<(), StoreError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let path = root.join("tokens.json");
        if !path.exists() {
            return Ok(());
        }
        let bytes = fs::read(&path).map_err(unavailable)?;
        let on_disk: BTreeMap<String, CoderId> =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("tokens.json: {e}")))?;
        self.tokens.lock().extend(on_disk);
        Ok(())
    }

    pub fn request_log_entries(&self) -> Result<Vec<RequestLogEntry>, StoreError> {
        match &self.root {
            None => Ok(self.memory_log.lock().clone()),
            Some(root) => {
                let path = root.join("llm_requests.jsonl");
                if !path.exists() {
                    return Ok(Vec::new());
                }
                read_jsonl(&path)
            }
        }
    }
}

impl RequestLog for Store {
    fn record(&self, entry: RequestLogEntry) {
        match &self.root {
            None => self.memory_log.lock().push(entry),
            Some(root) => {
                let write = || -> std::io::Result<()> {
                    let mut line = serde_json::to_vec(&entry)?;
                    line.push(b'\n');
                    let _serialized = self.log_write.lock();
                    let mut f = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(root.join("llm_requests.jsonl"))?;
                    f.write_all(&line)?;
                    Ok(())
                };
                if let Err(e) = write() {
                    tracing::warn!("could not append to LLM request log: {e}");
                }
            }
        }
    }
}

fn replay_records(events: &[EventRecord]) -> Result<ProjectState, StoreError> {
    for (i, e) in events.iter().enumerate() {
        if e.sequence_no != i as u64 + 1 {
            return Err(StoreError::Corrupt(format!(
                "event {} has sequence number {}",
                i + 1,
                e.sequence_no
            )));
        }
    }
    Ok(ProjectState::replay(events.iter().map(|e| &e.mutation))?)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(unavailable)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(unavailable)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            StoreError::Corrupt(format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}

fn read_events(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    read_jsonl(path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(unavailable)?;
    f.write_all(bytes).and_then(|_| f.sync_data()).map_err(unavailable)?;
    fs::rename(&tmp, path).map_err(unavailable)
}
