use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rough_token_count, ChatBackend, ChatRequest, ChatResponse};
use crate::error::{BackendError, Error, Result};

/// What the mock answers: a completion, or a failure (`{"fail": "..."}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fail { fail: String },
}

impl From<&str> for MockReply {
    fn from(text: &str) -> Self {
        MockReply::Text(text.to_owned())
    }
}

/// Fires when the rendered prompt contains every listed substring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(deserialize_with = "one_or_many")]
    pub contains: Vec<String>,
    pub reply: MockReply,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// Deterministic scripted backend.
///
/// Lookup order: exact prompt hash, then the first matching rule, then the
/// fallback. Token counts are whitespace word counts and latency is zero, so
/// the same script over the same prompts always yields identical responses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockBackend {
    #[serde(default)]
    pub by_hash: BTreeMap<String, MockReply>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: Option<MockReply>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("mock script", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Answers `request` exactly (by prompt hash) with `reply`.
    pub fn on_request(mut self, request: &ChatRequest, reply: impl Into<MockReply>) -> Self {
        self.by_hash.insert(request.prompt_hash(), reply.into());
        self
    }

    pub fn rule(mut self, contains: &[&str], reply: impl Into<MockReply>) -> Self {
        self.rules.push(MockRule { contains: contains.iter().map(|s| (*s).to_owned()).collect(), reply: reply.into() });
        self
    }

    pub fn fallback(mut self, reply: impl Into<MockReply>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    fn lookup(&self, rendered: &str, hash: &str) -> Option<&MockReply> {
        self.by_hash
            .get(hash)
            .or_else(|| {
                self.rules
                    .iter()
                    .find(|r| r.contains.iter().all(|s| rendered.contains(s.as_str())))
                    .map(|r| &r.reply)
            })
            .or(self.fallback.as_ref())
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let rendered = request.rendered();
        let hash = super::prompt_hash(&rendered);
        match self.lookup(&rendered, &hash) {
            Some(MockReply::Text(text)) => Ok(ChatResponse {
                text: text.clone(),
                prompt_tokens: rough_token_count(&rendered),
                completion_tokens: rough_token_count(text),
                latency: 0.0,
                attempts: 1,
            }),
            Some(MockReply::Fail { fail }) => Err(BackendError::Scripted(fail.clone())),
            None => Err(BackendError::Scripted(format!("no scripted reply for prompt {}", &hash[..16]))),
        }
    }
}
