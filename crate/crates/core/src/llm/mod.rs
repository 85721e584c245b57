//! Chat-completion backends.
//!
//! [`ChatBackend`] is the one seam every actor talks through. Two
//! implementations ship: [`HttpBackend`] for OpenAI-compatible endpoints and
//! [`MockBackend`], a pure function of its script used by tests and dry runs.

mod http;
mod ledger;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Error, Result};

pub(crate) use http::Retrier;
pub use http::{HttpBackend, HttpReply, RetryPolicy, Sleeper, Transport, TransportError, UreqTransport};
pub use ledger::{record_usage, RecordingBackend, SharedLedger, UsageLedger};
pub use mock::{MockBackend, MockReply, MockRule};

/// Env var prefix whose `<PROVIDER>` suffix overrides a configured api key.
pub const API_KEY_ENV_PREFIX: &str = "SQURVE_API_KEY_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self> {
        if !messages.iter().any(|m| m.role == Role::User) {
            return Err(Error::Argument("chat request needs at least one user message".into()));
        }
        Ok(Self { messages, temperature: None })
    }

    /// A single user message.
    pub fn user(content: impl Into<String>) -> Self {
        Self { messages: vec![ChatMessage { role: Role::User, content: content.into() }], temperature: None }
    }

    pub fn with_system(mut self, content: impl Into<String>) -> Self {
        self.messages.insert(0, ChatMessage { role: Role::System, content: content.into() });
        self
    }

    /// Canonical text of the whole conversation; the mock keys on its hash.
    pub fn rendered(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("[{}]\n{}", m.role.as_str(), m.content))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Hex SHA-256 of [`ChatRequest::rendered`].
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.rendered())
    }
}

pub fn prompt_hash(rendered: &str) -> String {
    let digest = Sha256::digest(rendered.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds.
    pub latency: f64,
    pub attempts: u32,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// An api key. Never printed or serialized: `Debug`, `Display` and
/// `Serialize` all show `***`.
#[derive(Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct Secret(String);

impl Serialize for Secret {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(REDACTED)
    }
}

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({REDACTED})")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(REDACTED)
    }
}

const REDACTED: &str = "***";

/// Env var name carrying the key override for `provider`.
pub fn api_key_env_var(provider: &str) -> String {
    let suffix: String = provider
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("{API_KEY_ENV_PREFIX}{suffix}")
}

/// Known OpenAI-compatible base URLs by provider name.
pub fn default_base_url(provider: &str) -> Option<&'static str> {
    match provider.to_ascii_lowercase().as_str() {
        "qwen" | "dashscope" => Some("https://dashscope.aliyuncs.com/compatible-mode/v1"),
        "openai" => Some("https://api.openai.com/v1"),
        "deepseek" => Some("https://api.deepseek.com/v1"),
        "zhipu" | "glm" => Some("https://open.bigmodel.cn/api/paas/v4"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub provider_name: String,
    #[serde(skip_serializing, default)]
    pub api_key: Secret,
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    /// Per-request timeout, seconds.
    pub timeout: f64,
}

impl BackendConfig {
    pub fn new(provider_name: impl Into<String>, model_name: impl Into<String>) -> Self {
        let provider_name = provider_name.into();
        Self {
            base_url: default_base_url(&provider_name).unwrap_or_default().to_owned(),
            provider_name,
            api_key: Secret::default(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_retries: 3,
            timeout: 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::Config(format!("timeout must be positive, got {}", self.timeout)));
        }
        Ok(())
    }

    /// Replaces the api key with `SQURVE_API_KEY_<PROVIDER>` when that is set.
    pub fn apply_env_override(&mut self) {
        if let Ok(key) = std::env::var(api_key_env_var(&self.provider_name)) {
            if !key.is_empty() {
                self.api_key = Secret::new(key);
            }
        }
    }

    pub fn timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

/// Builds the HTTP backend for `config` and runs one completion.
pub fn complete(config: &BackendConfig, request: &ChatRequest) -> Result<ChatResponse> {
    let backend = HttpBackend::new(config.clone())?;
    Ok(backend.complete(request)?)
}

/// Whitespace token count; the mock's stand-in for a tokenizer.
pub(crate) fn rough_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_needs_user_message() {
        let sys = ChatMessage { role: Role::System, content: "s".into() };
        assert!(ChatRequest::new(vec![sys.clone()]).is_err());
        let user = ChatMessage { role: Role::User, content: "u".into() };
        assert!(ChatRequest::new(vec![sys, user]).is_ok());
    }

    #[test]
    fn prompt_hash_is_stable() {
        let r = ChatRequest::user("P").with_system("S");
        assert_eq!(r.rendered(), "[system]\nS\n[user]\nP");
        assert_eq!(r.prompt_hash(), ChatRequest::user("P").with_system("S").prompt_hash());
        assert_eq!(r.prompt_hash().len(), 64);
        assert_ne!(r.prompt_hash(), ChatRequest::user("P").prompt_hash());
    }

    #[test]
    fn api_key_never_serialized_or_printed() {
        let mut cfg = BackendConfig::new("qwen", "qwen-turbo");
        cfg.api_key = Secret::new("sk-very-secret");
        let json = serde_json::to_string(&cfg).unwrap();
        let debug = format!("{cfg:?}");
        assert!(!json.contains("sk-very-secret"), "{json}");
        assert!(!debug.contains("sk-very-secret"), "{debug}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::new("qwen", "qwen-turbo");
        cfg.temperature = 0.75;
        assert!(cfg.validate().is_ok());
        cfg.temperature = 2.5;
        assert!(cfg.validate().is_err());
        cfg.temperature = 1.0;
        cfg.timeout = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_var_name() {
        assert_eq!(api_key_env_var("qwen"), "SQURVE_API_KEY_QWEN");
        assert_eq!(api_key_env_var("my-llm"), "SQURVE_API_KEY_MY_LLM");
    }

    #[test]
    fn env_override_replaces_key() {
        let var = api_key_env_var("envtestprovider");
        std::env::set_var(&var, "from-env");
        let mut cfg = BackendConfig::new("envtestprovider", "m");
        cfg.api_key = Secret::new("from-file");
        cfg.apply_env_override();
        std::env::remove_var(&var);
        assert_eq!(cfg.api_key.expose(), "from-env");
    }
}
