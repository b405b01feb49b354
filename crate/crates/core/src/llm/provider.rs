//! Chat-completion providers.

use std::collections::HashMap;
use std::time::Duration;

use parking_lot::RwLock;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::prompts::{PromptRequest, SuggestionKind};
use super::LlmError;

pub trait LlmProvider: Send + Sync {
    /// Returns the raw assistant message for `request`.
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError>;
}

impl<F> LlmProvider for F
where
    F: Fn(&PromptRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        self(request)
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// Client for an OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    config: HttpChatConfig,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpChatProvider {
    pub fn new(config: HttpChatConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { client, config })
    }

    pub fn request_body(request: &PromptRequest) -> serde_json::Value {
        serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                { "role": "system", "content": request.system_role },
                { "role": "user", "content": request.user_input },
            ],
        })
    }
}

impl LlmProvider for HttpChatProvider {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut http = self.client.post(url).json(&Self::request_body(request));
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let response = http
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        let body: ChatResponse = response
            .json()
            .map_err(|e| LlmError::ProviderUnavailable(format!("bad completion body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::ProviderUnavailable("completion has no content".into()))
    }
}

/// Hex SHA-256 over kind, system role and user input.
pub fn request_hash(request: &PromptRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&request.kind).unwrap_or_default());
    hasher.update([0]);
    hasher.update(request.system_role.as_bytes());
    hasher.update([0]);
    hasher.update(request.user_input.as_bytes());
    hex::encode(hasher.finalize())
}

/// Offline provider. Canned responses are looked up by [`request_hash`];
/// anything else gets a deterministic answer synthesized from the prompt.
#[derive(Default)]
pub struct MockLlmProvider {
    canned: RwLock<HashMap<String, String>>,
}

impl MockLlmProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_canned(canned: HashMap<String, String>) -> Self {
        Self {
            canned: RwLock::new(canned),
        }
    }

    pub fn insert(&self, request: &PromptRequest, response: impl Into<String>) {
        self.canned
            .write()
            .insert(request_hash(request), response.into());
    }

    fn synthesize(request: &PromptRequest) -> String {
        let input = request.user_input.as_str();
        match request.kind {
            SuggestionKind::OpenCodes => {
                let words: Vec<&str> = quoted_text(input)
                    .split_whitespace()
                    .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
                    .filter(|w| !w.is_empty())
                    .collect();
                let window = |start: usize| {
                    let start = start.min(words.len().saturating_sub(1));
                    words[start..(start + 5).min(words.len())].join(" ")
                };
                if words.is_empty() {
                    return "1. Unclear text\n2. Unclear text\n3. Unclear text\n".into();
                }
                format!(
                    "1. {}\n2. {}\n3. {}\n",
                    window(0),
                    window(words.len() / 2),
                    window(words.len().saturating_sub(5))
                )
            }
            SuggestionKind::RelevantCodes => section_list(input, "[Code list]:")
                .iter()
                .take(3)
                .enumerate()
                .map(|(i, c)| format!("{}. {c}\n", i + 1))
                .collect(),
            SuggestionKind::DecisionVersions => {
                let a = line_after(input, "[Code1]:");
                let b = line_after(input, "[Code2]:");
                let head = |s: &str| s.split_whitespace().take(3).collect::<Vec<_>>().join(" ");
                format!(
                    "Version1: {a}\nVersion2: {b}\nVersion3: {} and {}\n",
                    head(&a),
                    head(&b)
                )
            }
            SuggestionKind::CodeGroups => {
                let codes = section_list(input, "[Code list]:");
                let groups = codes.len().min(3);
                let mut out = String::new();
                for g in 0..groups {
                    let members: Vec<&String> = codes.iter().skip(g).step_by(groups).collect();
                    let theme = members[0]
                        .split_whitespace()
                        .take(3)
                        .collect::<Vec<_>>()
                        .join(" ");
                    out.push_str(&format!("Group{}: Theme of {theme}\n", g + 1));
                    for (i, m) in members.iter().enumerate() {
                        out.push_str(&format!("{}. {m}\n", i + 1));
                    }
                    out.push('\n');
                }
                out
            }
        }
    }
}

fn quoted_text(input: &str) -> &str {
    input
        .split_once("[Text]:\n\"")
        .and_then(|(_, rest)| rest.rsplit_once('"'))
        .map_or("", |(text, _)| text)
}

fn line_after(input: &str, marker: &str) -> String {
    input
        .split_once(marker)
        .and_then(|(_, rest)| rest.lines().nth(1))
        .unwrap_or_default()
        .trim()
        .to_owned()
}

fn section_list(input: &str, marker: &str) -> Vec<String> {
    let Some((_, rest)) = input.split_once(marker) else {
        return Vec::new();
    };
    rest.lines()
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once(". ").map(|(_, item)| item.to_owned()))
        .collect()
}

impl LlmProvider for MockLlmProvider {
    fn complete(&self, request: &PromptRequest) -> Result<String, LlmError> {
        if let Some(canned) = self.canned.read().get(&request_hash(request)) {
            return Ok(canned.clone());
        }
        Ok(Self::synthesize(request))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts::PromptSettings;

    #[test]
    fn canned_responses_win() {
        let mock = MockLlmProvider::new();
        let req = PromptRequest::open_codes("text", &PromptSettings::default());
        mock.insert(&req, "1. a\n2. b\n3. c");
        assert_eq!(mock.complete(&req).unwrap(), "1. a\n2. b\n3. c");
    }

    #[test]
    fn synthesized_group_answer_lists_every_code() {
        let codes: Vec<String> = (0..7).map(|i| format!("code number {i}")).collect();
        let req = PromptRequest::groups(&codes, &PromptSettings::default());
        let raw = MockLlmProvider::new().complete(&req).unwrap();
        for c in &codes {
            assert!(raw.contains(c.as_str()), "{raw}");
        }
        assert!(raw.contains("Group3:"));
    }

    #[test]
    fn synthesized_decision_uses_both_codes() {
        let req = PromptRequest::decision("t", "left code", "right code", &PromptSettings::default());
        let raw = MockLlmProvider::new().complete(&req).unwrap();
        assert!(raw.starts_with("Version1: left code\nVersion2: right code\n"), "{raw}");
    }

    #[test]
    fn hash_ignores_temperature_but_not_text() {
        let mut a = PromptRequest::open_codes("t", &PromptSettings::default());
        let b = PromptRequest::open_codes("u", &PromptSettings::default());
        let h = request_hash(&a);
        a.temperature = 0.1;
        assert_eq!(h, request_hash(&a));
        assert_ne!(h, request_hash(&b));
    }

    #[test]
    fn http_outage_is_provider_unavailable() {
        let p = HttpChatProvider::new(HttpChatConfig {
            base_url: "http://127.0.0.1:1/v1".into(),
            api_key: None,
            timeout: Duration::from_millis(500),
        })
        .unwrap();
        let req = PromptRequest::open_codes("t", &PromptSettings::default());
        assert!(matches!(p.complete(&req), Err(LlmError::ProviderUnavailable(_))));
    }

    #[test]
    fn request_body_carries_temperature() {
        let req = PromptRequest::open_codes("t", &PromptSettings::default());
        let body = HttpChatProvider::request_body(&req);
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["role"], "system");
    }
}
