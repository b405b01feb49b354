//! LLM assistance for all three phases: code suggestions, relevant codes
//! from the coder's own codebook, decision versions for a code pair, and
//! thematic grouping of final decisions.
//!
//! Outputs of the relevant-code and grouping requests are closed over their
//! inputs: every returned code is one of the supplied strings, verbatim.

pub mod parse;
pub mod prompts;
pub mod provider;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::match_key;
pub use parse::{parse_enumerated, ParseError, Parsed, ParsedGroup, PrefixStyle};
pub use prompts::{PromptRequest, PromptSettings, SuggestionKind};
pub use provider::{HttpChatConfig, HttpChatProvider, LlmProvider, MockLlmProvider};

pub const UNGROUPED: &str = "Ungrouped";
pub const MIN_GROUPS: usize = 2;
pub const MAX_GROUPS: usize = 8;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("LLM provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("unparseable LLM response: {0}")]
    UnparseableResponse(String),
    #[error("text is empty")]
    EmptyText,
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("every suggested code was outside the codebook: {0:?}")]
    HallucinatedCode(Vec<String>),
    #[error("grouping needs at least 3 decisions, got {0}")]
    TooFewDecisions(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub at: DateTime<Utc>,
    pub kind: SuggestionKind,
    pub model_id: String,
    pub temperature: f64,
    pub system_role: String,
    pub user_input: String,
    pub attempt: u32,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Audit sink for every outbound request.
pub trait RequestLog: Send + Sync {
    fn record(&self, entry: RequestLogEntry);
}

#[derive(Default)]
pub struct MemoryRequestLog {
    entries: Mutex<Vec<RequestLogEntry>>,
}

impl MemoryRequestLog {
    pub fn entries(&self) -> Vec<RequestLogEntry> {
        self.entries.lock().clone()
    }
}

impl RequestLog for MemoryRequestLog {
    fn record(&self, entry: RequestLogEntry) {
        self.entries.lock().push(entry);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestedGroup {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub kind: SuggestionKind,
    /// Codes or decision versions; empty for groupings.
    #[serde(default)]
    pub items: Vec<String>,
    #[serde(default)]
    pub groups: Vec<SuggestedGroup>,
    /// Supplied decisions the model left out of every group.
    #[serde(default)]
    pub ungrouped: Vec<String>,
    pub raw: String,
}

impl SuggestionSet {
    fn items(kind: SuggestionKind, items: Vec<String>, raw: String) -> Self {
        Self {
            kind,
            items,
            groups: Vec::new(),
            ungrouped: Vec::new(),
            raw,
        }
    }
}

pub struct Assistant {
    provider: Arc<dyn LlmProvider>,
    log: Arc<dyn RequestLog>,
    settings: PromptSettings,
}

impl Assistant {
    pub fn new(provider: Arc<dyn LlmProvider>, log: Arc<dyn RequestLog>, settings: PromptSettings) -> Self {
        Self {
            provider,
            log,
            settings,
        }
    }

    pub fn settings(&self) -> &PromptSettings {
        &self.settings
    }

    fn call(&self, request: &PromptRequest, attempt: u32) -> Result<String, LlmError> {
        let result = self.provider.complete(request);
        self.log.record(RequestLogEntry {
            at: Utc::now(),
            kind: request.kind,
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            system_role: request.system_role.clone(),
            user_input: request.user_input.clone(),
            attempt,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }

    /// Sends `request`, parsing with `parse`. An unparseable answer is
    /// retried once with a format reminder.
    fn exchange<T>(
        &self,
        request: PromptRequest,
        parse: impl Fn(&str) -> Result<T, LlmError>,
    ) -> Result<(T, String), LlmError> {
        let raw = self.call(&request, 1)?;
        match parse(&raw) {
            Ok(v) => Ok((v, raw)),
            Err(LlmError::UnparseableResponse(_)) => {
                let raw = self.call(&request.with_format_reminder(), 2)?;
                parse(&raw).map(|v| (v, raw))
            }
            Err(e) => Err(e),
        }
    }

    pub fn suggest_open_codes(&self, unit_text: &str) -> Result<SuggestionSet, LlmError> {
        if unit_text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let request = PromptRequest::open_codes(unit_text, &self.settings);
        let (items, raw) = self.exchange(request, |raw| parse_items(raw, 3..=3, PrefixStyle::Numbered))?;
        Ok(SuggestionSet::items(SuggestionKind::OpenCodes, items, raw))
    }

    pub fn suggest_relevant_codes(&self, unit_text: &str, codebook: &[String]) -> Result<SuggestionSet, LlmError> {
        if unit_text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        if codebook.is_empty() {
            return Err(LlmError::EmptyCodebook);
        }
        let request = PromptRequest::relevant_codes(unit_text, codebook, &self.settings);
        let (items, raw) = self.exchange(request, |raw| {
            let proposed = parse_items(raw, 1..=3, PrefixStyle::Numbered)?;
            let mut kept: Vec<String> = Vec::new();
            for item in &proposed {
                let key = match_key(item);
                if let Some(code) = codebook.iter().find(|c| match_key(c) == key) {
                    if !kept.contains(code) {
                        kept.push(code.clone());
                    }
                }
            }
            if kept.is_empty() {
                return Err(LlmError::HallucinatedCode(proposed));
            }
            Ok(kept)
        })?;
        Ok(SuggestionSet::items(SuggestionKind::RelevantCodes, items, raw))
    }

    pub fn suggest_decision(&self, unit_text: &str, code_a: &str, code_b: &str) -> Result<SuggestionSet, LlmError> {
        if unit_text.trim().is_empty() || code_a.trim().is_empty() || code_b.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let request = PromptRequest::decision(unit_text, code_a, code_b, &self.settings);
        let (items, raw) = self.exchange(request, |raw| parse_items(raw, 3..=3, PrefixStyle::Versioned))?;
        Ok(SuggestionSet::items(SuggestionKind::DecisionVersions, items, raw))
    }

    pub fn suggest_groups(&self, decisions: &[String]) -> Result<SuggestionSet, LlmError> {
        if decisions.len() < 3 {
            return Err(LlmError::TooFewDecisions(decisions.len()));
        }
        let request = PromptRequest::groups(decisions, &self.settings);
        let (groups, raw) = self.exchange(request, |raw| {
            match parse_enumerated(raw, MIN_GROUPS..=MAX_GROUPS, PrefixStyle::Grouped).map_err(unparseable)? {
                Parsed::Groups(groups) => Ok(groups),
                Parsed::Items(_) => Err(LlmError::UnparseableResponse("expected groups".into())),
            }
        })?;
        let mut assigned = vec![false; decisions.len()];
        let mut out = Vec::new();
        for group in groups {
            let mut members = Vec::new();
            for member in &group.members {
                let key = match_key(member);
                if let Some(i) = decisions.iter().position(|d| match_key(d) == key) {
                    if !std::mem::replace(&mut assigned[i], true) {
                        members.push(decisions[i].clone());
                    }
                }
            }
            if !members.is_empty() {
                out.push(SuggestedGroup {
                    name: group.name,
                    members,
                });
            }
        }
        let ungrouped = decisions
            .iter()
            .zip(&assigned)
            .filter(|(_, a)| !**a)
            .map(|(d, _)| d.clone())
            .collect();
        Ok(SuggestionSet {
            kind: SuggestionKind::CodeGroups,
            items: Vec::new(),
            groups: out,
            ungrouped,
            raw,
        })
    }
}

fn unparseable(e: ParseError) -> LlmError {
    LlmError::UnparseableResponse(e.to_string())
}

fn parse_items(raw: &str, expected: std::ops::RangeInclusive<usize>, style: PrefixStyle) -> Result<Vec<String>, LlmError> {
    match parse_enumerated(raw, expected, style).map_err(unparseable)? {
        Parsed::Items(items) => Ok(items),
        Parsed::Groups(_) => Err(LlmError::UnparseableResponse("expected items".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn assistant(provider: impl LlmProvider + 'static) -> (Assistant, Arc<MemoryRequestLog>) {
        let log = Arc::new(MemoryRequestLog::default());
        (
            Assistant::new(Arc::new(provider), log.clone(), PromptSettings::default()),
            log,
        )
    }

    fn fixed(raw: &'static str) -> impl LlmProvider {
        move |_: &PromptRequest| Ok(raw.to_owned())
    }

    #[test]
    fn open_codes_from_mock() {
        let (a, log) = assistant(fixed("1. a\n2. b\n3. c"));
        let s = a.suggest_open_codes("text").unwrap();
        assert_eq!(s.items, ["a", "b", "c"]);
        let entries = log.entries();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].temperature, 0.7);
    }

    #[test]
    fn two_items_fail_after_one_retry() {
        let (a, log) = assistant(fixed("1. a\n2. b"));
        assert!(matches!(a.suggest_open_codes("text"), Err(LlmError::UnparseableResponse(_))));
        let entries = log.entries();
        assert_eq!(entries.iter().map(|e| e.attempt).collect::<Vec<_>>(), [1, 2]);
        assert!(entries[1].user_input.len() > entries[0].user_input.len());
    }

    #[test]
    fn retry_can_recover() {
        let calls = AtomicUsize::new(0);
        let (a, _) = assistant(move |_: &PromptRequest| {
            Ok(if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                "sure!".to_owned()
            } else {
                "Version1: x\nVersion2: y\nVersion3: z".to_owned()
            })
        });
        assert_eq!(a.suggest_decision("t", "a", "b").unwrap().items, ["x", "y", "z"]);
    }

    #[test]
    fn missing_version_is_unparseable() {
        let (a, _) = assistant(fixed("Version1: x\nVersion2: y"));
        assert!(matches!(a.suggest_decision("t", "a", "b"), Err(LlmError::UnparseableResponse(_))));
    }

    #[test]
    fn provider_outage_is_not_retried() {
        let (a, log) = assistant(|_: &PromptRequest| Err(LlmError::ProviderUnavailable("down".into())));
        assert!(matches!(a.suggest_open_codes("t"), Err(LlmError::ProviderUnavailable(_))));
        assert_eq!(log.entries().len(), 1);
    }

    #[test]
    fn relevant_codes_drop_hallucinations() {
        let (a, _) = assistant(fixed("1. known code.\n2. invented\n3. Known Code"));
        let s = a
            .suggest_relevant_codes("t", &["Known code".to_owned(), "other".to_owned()])
            .unwrap();
        assert_eq!(s.items, ["Known code"]);
    }

    #[test]
    fn relevant_codes_from_single_entry_codebook() {
        let (a, _) = assistant(MockLlmProvider::new());
        let s = a.suggest_relevant_codes("t", &["only".to_owned()]).unwrap();
        assert_eq!(s.items, ["only"]);
    }

    #[test]
    fn relevant_codes_all_hallucinated() {
        let (a, _) = assistant(fixed("1. nope"));
        assert!(matches!(
            a.suggest_relevant_codes("t", &["x".to_owned()]),
            Err(LlmError::HallucinatedCode(_))
        ));
        assert_eq!(a.suggest_relevant_codes("t", &[]), Err(LlmError::EmptyCodebook));
    }

    #[test]
    fn omitted_decisions_land_in_ungrouped() {
        let (a, _) = assistant(fixed("Group1: A\n1. d1\n2. d2\nGroup2: B\n1. d3\n2. made up\n3. d1"));
        let decisions: Vec<String> = ["d1", "d2", "d3", "d4"].map(String::from).to_vec();
        let s = a.suggest_groups(&decisions).unwrap();
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[1].members, ["d3"]);
        assert_eq!(s.ungrouped, ["d4"]);
    }

    #[test]
    fn grouping_needs_three_decisions() {
        let (a, _) = assistant(MockLlmProvider::new());
        assert_eq!(
            a.suggest_groups(&["a".to_owned(), "b".to_owned()]),
            Err(LlmError::TooFewDecisions(2))
        );
    }
}
