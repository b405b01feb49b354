//! Domain types shared by every layer: projects, units, open codes,
//! decisions, code groups and individual codebooks.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Opaque project identifier.
    ProjectId
);
string_id!(
    /// Coder identifier, as provisioned with a bearer token.
    CoderId
);
string_id!(
    /// Unit identifier, unique within a project (`u0`, `u1`, ...).
    UnitId
);

impl ProjectId {
    pub fn generate() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }
}

impl UnitId {
    pub fn for_index(index: usize) -> Self {
        Self(format!("u{index}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Sentence,
    Paragraph,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence" => Ok(Granularity::Sentence),
            "paragraph" => Ok(Granularity::Paragraph),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    OpenCoding,
    Discussion,
    Grouping,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::OpenCoding => "open_coding",
            Phase::Discussion => "discussion",
            Phase::Grouping => "grouping",
        })
    }
}

/// The two coders of a project. The lead created the project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub lead: CoderId,
    pub second: CoderId,
}

impl Roster {
    pub fn contains(&self, coder: &CoderId) -> bool {
        self.lead == *coder || self.second == *coder
    }

    /// Position of `coder` in the roster: 0 for the lead, 1 for the second.
    pub fn slot(&self, coder: &CoderId) -> Option<usize> {
        if self.lead == *coder {
            Some(0)
        } else if self.second == *coder {
            Some(1)
        } else {
            None
        }
    }

    pub fn at(&self, slot: usize) -> &CoderId {
        if slot == 0 {
            &self.lead
        } else {
            &self.second
        }
    }

    pub fn partner_of(&self, coder: &CoderId) -> Option<&CoderId> {
        self.slot(coder).map(|s| self.at(1 - s))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoderId> {
        [&self.lead, &self.second].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: ProjectId,
    pub name: String,
    pub granularity: Granularity,
    pub coders: Roster,
    pub unit_ids: Vec<UnitId>,
    pub phase: Phase,
    pub version: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataUnit {
    pub unit_id: UnitId,
    pub project_id: ProjectId,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    Manual,
    LlmSuggestion,
    RelevantCode,
}

/// A 1..=5 self-rating of how sure a coder is about a code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Certainty(u8);

impl Certainty {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(level: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&level).then_some(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Certainty {
    type Error = String;

    fn try_from(level: u8) -> Result<Self, Self::Error> {
        Certainty::new(level).ok_or_else(|| format!("certainty {level} outside 1..=5"))
    }
}

impl From<Certainty> for u8 {
    fn from(c: Certainty) -> u8 {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenCodeEntry {
    pub unit_id: UnitId,
    pub coder_id: CoderId,
    pub code_text: String,
    #[serde(default)]
    pub keyword_supports: Vec<String>,
    #[serde(default)]
    pub certainty: Option<Certainty>,
    pub source: CodeSource,
    pub updated_at: DateTime<Utc>,
}

impl OpenCodeEntry {
    pub fn is_coded(&self) -> bool {
        !self.code_text.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionProvenance {
    /// Taken from the lead coder's code.
    CoderA,
    /// Taken from the second coder's code.
    CoderB,
    Llm,
    Custom,
}

impl fmt::Display for DecisionProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionProvenance::CoderA => "coder_a",
            DecisionProvenance::CoderB => "coder_b",
            DecisionProvenance::Llm => "llm",
            DecisionProvenance::Custom => "custom",
        })
    }
}

/// Both coders' code texts captured just before a replace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaceSnapshot {
    pub coder_a: String,
    pub coder_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDecision {
    pub unit_id: UnitId,
    pub decision_text: String,
    pub provenance: DecisionProvenance,
    pub replaced: bool,
    /// Present iff `replaced`.
    pub snapshot: Option<ReplaceSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeGroup {
    pub name: String,
    pub members: Vec<UnitId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookEntry {
    /// Spelling of the code on the earliest unit that uses it.
    pub code: String,
    pub normalized: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualCodebook {
    pub coder_id: CoderId,
    pub entries: Vec<CodebookEntry>,
}

/// Canonical form of a free-text code: trimmed, lowercased, inner
/// whitespace collapsed to single spaces. Each distinct normalized string
/// is one category for agreement statistics and one codebook entry.
pub fn normalize_code(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Looser key used to match LLM output back to supplied strings: the
/// normalized form with trailing sentence punctuation removed.
pub fn match_key(text: &str) -> String {
    normalize_code(text)
        .trim_end_matches(['.', '!', '?'])
        .trim_end()
        .to_owned()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
