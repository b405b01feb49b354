//! Deployment settings, read from a TOML file. Credentials never live in
//! the file; only the name of the environment variable holding them does.

use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::llm::prompts::{DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use crate::metrics::DEFAULT_AGREEMENT_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub threshold: f64,
    /// Word limit for open codes; 0 disables the check.
    pub code_word_limit: usize,
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            threshold: DEFAULT_AGREEMENT_THRESHOLD,
            code_word_limit: 10,
            llm: LlmSettings::default(),
            embedding: EmbeddingSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    Mock,
    OpenaiCompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub provider: LlmBackend,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            provider: LlmBackend::Mock,
            base_url: "https://api.openai.com/v1".into(),
            model: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            api_key_env: "CQA_LLM_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackend {
    TermFrequency,
    OpenaiCompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingBackend,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingBackend::TermFrequency,
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "CQA_EMBEDDING_API_KEY".into(),
            timeout_secs: 30,
        }
    }
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn max_code_words(&self) -> Option<usize> {
        (self.code_word_limit > 0).then_some(self.code_word_limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = Settings::from_toml_str("").unwrap();
        assert_eq!(s.threshold, 0.8);
        assert_eq!(s.llm.temperature, 0.7);
        assert_eq!(s.max_code_words(), Some(10));
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let s = Settings::from_toml_str(
            "threshold = 0.75\ncode_word_limit = 0\n[llm]\nprovider = \"openai_compatible\"\n",
        )
        .unwrap();
        assert_eq!(s.threshold, 0.75);
        assert_eq!(s.max_code_words(), None);
        assert_eq!(s.llm.provider, LlmBackend::OpenaiCompatible);
        assert!(Settings::from_toml_str("bogus = 1").is_err());
    }
}
