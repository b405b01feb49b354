//! Prompt templates for the four suggestion kinds.
//!
//! The rendered layout is documented in `docs/prompts.md` and pinned by
//! golden files under `crates/core/tests/goldens/`.

use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

pub const ROLE_OPEN_CODING: &str = "You are a helpful qualitative analysis assistant, aiding \
researchers in developing codes that can be utilized in subsequent stages, including discussions \
for creating codebooks and final coding processes.";

pub const ROLE_DECISION: &str = "You are a helpful qualitative analysis assistant, aiding \
researchers in developing final codes that can be utilized in subsequent stages, including final \
coding processes.";

pub const ROLE_GROUPING: &str = "You are a helpful qualitative analysis assistant, aiding \
researchers in generating final code groups/main themes based on the [Code list] provided, in \
order to give an overview of the main content of the coding.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    OpenCodes,
    RelevantCodes,
    DecisionVersions,
    CodeGroups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub model_id: String,
    pub temperature: f64,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL.to_owned(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: SuggestionKind,
    pub system_role: String,
    pub user_input: String,
    pub temperature: f64,
    pub model_id: String,
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {}\n", i + 1, item))
        .collect()
}

fn quoted_text(text: &str) -> String {
    format!("[Text]:\n\"{text}\"\n")
}

impl PromptRequest {
    fn new(kind: SuggestionKind, role: &str, user_input: String, settings: &PromptSettings) -> Self {
        Self {
            kind,
            system_role: role.to_owned(),
            user_input,
            temperature: settings.temperature,
            model_id: settings.model_id.clone(),
        }
    }

    pub fn open_codes(unit_text: &str, settings: &PromptSettings) -> Self {
        let user = format!(
            "Please create three general summaries for [Text] (within six-word).\n\n{}",
            quoted_text(unit_text)
        );
        Self::new(SuggestionKind::OpenCodes, ROLE_OPEN_CODING, user, settings)
    }

    pub fn relevant_codes(unit_text: &str, codebook: &[String], settings: &PromptSettings) -> Self {
        let user = format!(
            "Please identify the top three codes relevant to this [Text] from the following \
             [Code list].\n\n{}\n[Code list]:\n{}\nHere is the example format of results:\n\
             1. code content\n2. code content\n3. code content\n",
            quoted_text(unit_text),
            numbered(codebook)
        );
        Self::new(SuggestionKind::RelevantCodes, ROLE_OPEN_CODING, user, settings)
    }

    pub fn decision(unit_text: &str, code_a: &str, code_b: &str, settings: &PromptSettings) -> Self {
        let user = format!(
            "Please create three concise, non-repetitive, and general six-word code combinations \
             for the [Text] using [Code1] and [Code2].\n\n{}\n[Code1]:\n{code_a}\n[Code2]:\n\
             {code_b}\n\nRequirements:\n1. 6 words or fewer;\n2. No duplicate words;\n\
             3. Be general;\n4. Three distinct versions\n\nHere is the format of results:\n\
             Version1: code content\nVersion2: code content\nVersion3: code content\n",
            quoted_text(unit_text)
        );
        Self::new(SuggestionKind::DecisionVersions, ROLE_DECISION, user, settings)
    }

    pub fn groups(decisions: &[String], settings: &PromptSettings) -> Self {
        let user = format!(
            "Organize the following [Code list] into 3 thematic groups without altering the \
             original codes, and name each group.\n\n[Code list]:\n{}\nHere is the format of the \
             results:\nGroup1: [theme]\n1.[code]\n2.[code]\n3.[code]\n",
            numbered(decisions)
        );
        Self::new(SuggestionKind::CodeGroups, ROLE_GROUPING, user, settings)
    }

    /// Same request with a format reminder appended, used for the single retry.
    pub fn with_format_reminder(&self) -> Self {
        let reminder = match self.kind {
            SuggestionKind::OpenCodes | SuggestionKind::RelevantCodes => {
                "Answer with exactly one code per line, numbered \"1. \", \"2. \", \"3. \", and nothing else."
            }
            SuggestionKind::DecisionVersions => {
                "Answer with exactly three lines starting \"Version1: \", \"Version2: \", \"Version3: \", and nothing else."
            }
            SuggestionKind::CodeGroups => {
                "Answer only with \"GroupN: theme\" lines, each followed by its numbered codes copied exactly from the [Code list]."
            }
        };
        let mut retry = self.clone();
        retry.user_input = format!("{}\n{reminder}\n", self.user_input);
        retry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_role_uses_the_assistant_persona() {
        for role in [ROLE_OPEN_CODING, ROLE_DECISION, ROLE_GROUPING] {
            assert!(role.starts_with("You are a helpful qualitative analysis assistant"));
        }
    }

    #[test]
    fn default_temperature() {
        let r = PromptRequest::open_codes("x", &PromptSettings::default());
        assert_eq!(r.temperature, 0.7);
        assert_eq!(r.model_id, "gpt-3.5-turbo");
    }

    #[test]
    fn reminder_is_appended() {
        let r = PromptRequest::decision("t", "a", "b", &PromptSettings::default());
        let retry = r.with_format_reminder();
        assert!(retry.user_input.starts_with(&r.user_input));
        assert!(retry.user_input.contains("Version1: "));
    }
}
