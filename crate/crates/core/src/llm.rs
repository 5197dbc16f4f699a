//! Chat-completion clients.
//!
//! [`HttpChatClient`] talks to any OpenAI-compatible `/chat/completions`
//! endpoint. [`ScriptedClient`] replays canned responses and records every
//! conversation it is sent, for tests and offline runs. Both are stateless
//! with respect to the conversation; the caller owns the history.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const API_KEY_ENV: &str = "WORKFLOW_QL_API_KEY";
pub const BASE_URL_ENV: &str = "WORKFLOW_QL_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("scripted responses exhausted after {served} call(s)")]
    ScriptExhausted { served: usize },
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
    #[error("invalid client configuration: {0}")]
    InvalidConfig(String),
    #[error("no API key: set {API_KEY_ENV}")]
    MissingApiKey,
    #[error("cannot load mock script {path}: {message}")]
    Script { path: String, message: String },
}

impl LlmError {
    /// Transport failures are the only errors worth retrying by the caller.
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

/// Anything that can answer a conversation with one assistant message.
pub trait ChatClient: Send + Sync {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).complete(conversation)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for std::sync::Arc<C> {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).complete(conversation)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).complete(conversation)
    }
}

fn check_conversation(conversation: &[ChatMessage]) -> Result<(), LlmError> {
    match conversation.last() {
        None => Err(LlmError::InvalidConversation("conversation is empty".into())),
        Some(m) if m.role != Role::User => Err(LlmError::InvalidConversation(
            "conversation must end with a user message".into(),
        )),
        _ if conversation.iter().any(|m| m.content.is_empty()) => Err(
            LlmError::InvalidConversation("message with empty content".into()),
        ),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_owned(),
            model: "gpt-4".to_owned(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl LlmConfig {
    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff_for(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.min(6);
        self.backoff.saturating_mul(factor).min(Duration::from_secs(30))
    }
}

/// Blocking client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpChatClient {
    config: LlmConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: LlmConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        if config.timeout.is_zero() {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    /// Builds a client whose key comes from `WORKFLOW_QL_API_KEY`.
    pub fn from_env(config: LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(LlmError::MissingApiKey)?;
        Self::new(config, Some(key))
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut request = self.agent.post(&self.config.endpoint());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| Attempt::Transient(LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            }))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Transient(LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            }))?;
        if !(200..300).contains(&status) {
            let err = LlmError::Status { status, body: text };
            return Err(if status == 429 || status >= 500 {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        extract_content(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Transient(LlmError),
    Fatal(LlmError),
}

impl ChatClient for HttpChatClient {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError> {
        check_conversation(conversation)?;
        let body = json!({
            "model": self.config.model,
            "messages": conversation,
            "temperature": self.config.temperature,
        });
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => {
                    if attempt >= self.config.max_retries {
                        return Err(match e {
                            LlmError::Transport { message, .. } => LlmError::Transport {
                                attempts: attempt + 1,
                                message,
                            },
                            other => other,
                        });
                    }
                    std::thread::sleep(self.config.backoff_for(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Pulls `choices[0].message.content` out of a completion response body.
pub fn extract_content(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.as_array())
        .and_then(|c| c.first())
        .ok_or_else(|| LlmError::Malformed("response has no choices".into()))?;
    match choice.pointer("/message/content").and_then(|c| c.as_str()) {
        Some(text) if !text.trim().is_empty() => Ok(text.to_owned()),
        _ => Err(LlmError::Malformed(
            "first choice has no message content".into(),
        )),
    }
}

/// Replays a fixed list of responses in order.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    responses: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
    received: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }

    /// Parses a mock script: responses separated by lines holding only `---`.
    pub fn parse_script(text: &str) -> Vec<String> {
        let mut responses = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for line in text.lines() {
            if line.trim_end() == "---" {
                responses.push(current.join("\n"));
                current.clear();
            } else {
                current.push(line);
            }
        }
        if !current.is_empty() {
            responses.push(current.join("\n"));
        }
        responses
    }

    pub fn from_script(text: &str) -> Self {
        Self::new(Self::parse_script(text))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::from_script(&text))
    }

    /// Every conversation passed to [`ChatClient::complete`], in call order.
    pub fn received(&self) -> Vec<Vec<ChatMessage>> {
        self.received.lock().expect("lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("lock").len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, conversation: &[ChatMessage]) -> Result<String, LlmError> {
        check_conversation(conversation)?;
        self.received
            .lock()
            .expect("lock")
            .push(conversation.to_vec());
        let mut served = self.served.lock().expect("lock");
        let next = self.responses.lock().expect("lock").pop_front();
        match next {
            Some(text) => {
                *served += 1;
                if text.trim().is_empty() {
                    Err(LlmError::Malformed("scripted response is empty".into()))
                } else {
                    Ok(text)
                }
            }
            None => Err(LlmError::ScriptExhausted { served: *served }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_in_order() {
        let client = ScriptedClient::new(["A", "B"]);
        let conv = [ChatMessage::user("hi")];
        assert_eq!(client.complete(&conv).unwrap(), "A");
        assert_eq!(client.complete(&conv).unwrap(), "B");
        assert!(matches!(
            client.complete(&conv),
            Err(LlmError::ScriptExhausted { served: 2 })
        ));
        assert_eq!(client.received().len(), 3);
    }

    #[test]
    fn script_format_splits_on_separator_lines() {
        let parsed = ScriptedClient::parse_script("first\nline two\n---\nsecond\n---\n");
        assert_eq!(parsed, ["first\nline two", "second"]);
        let parsed = ScriptedClient::parse_script("only");
        assert_eq!(parsed, ["only"]);
        // a separator must be alone on its line
        let parsed = ScriptedClient::parse_script("a --- b\n---\nc");
        assert_eq!(parsed, ["a --- b", "c"]);
    }

    #[test]
    fn conversation_preconditions() {
        let client = ScriptedClient::new(["A"]);
        assert!(matches!(
            client.complete(&[]),
            Err(LlmError::InvalidConversation(_))
        ));
        assert!(matches!(
            client.complete(&[ChatMessage::assistant("x")]),
            Err(LlmError::InvalidConversation(_))
        ));
        assert_eq!(client.remaining(), 1);
    }

    #[test]
    fn content_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "hello");
        for bad in [
            r#"{"choices":[]}"#,
            r#"{"choices":[{"message":{"role":"assistant","content":""}}]}"#,
            r#"{"choices":[{"message":{"role":"assistant"}}]}"#,
            r#"{}"#,
            "not json",
        ] {
            assert!(matches!(extract_content(bad), Err(LlmError::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let config = LlmConfig {
            backoff: Duration::from_millis(100),
            ..LlmConfig::default()
        };
        assert_eq!(config.backoff_for(0), Duration::from_millis(100));
        assert_eq!(config.backoff_for(2), Duration::from_millis(400));
        assert_eq!(config.backoff_for(20), Duration::from_millis(6400));
    }

    #[test]
    fn endpoint_joins_cleanly() {
        let config = LlmConfig {
            base_url: "http://localhost:8080/v1/".into(),
            ..LlmConfig::default()
        };
        assert_eq!(config.endpoint(), "http://localhost:8080/v1/chat/completions");
    }
}
