use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse};
use crate::error::BackendError;

/// Running totals over recorded responses. Counts LLM calls only; wall time
/// is reported separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub total_calls: u64,
    /// Seconds.
    pub total_latency: f64,
}

impl UsageLedger {
    pub fn record(&mut self, response: &ChatResponse) {
        self.total_prompt_tokens += response.prompt_tokens;
        self.total_completion_tokens += response.completion_tokens;
        self.total_calls += 1;
        self.total_latency += response.latency;
    }

    pub fn merge(&self, other: &UsageLedger) -> UsageLedger {
        UsageLedger {
            total_prompt_tokens: self.total_prompt_tokens + other.total_prompt_tokens,
            total_completion_tokens: self.total_completion_tokens + other.total_completion_tokens,
            total_calls: self.total_calls + other.total_calls,
            total_latency: self.total_latency + other.total_latency,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_prompt_tokens + self.total_completion_tokens
    }
}

pub fn record_usage(mut ledger: UsageLedger, response: &ChatResponse) -> UsageLedger {
    ledger.record(response);
    ledger
}

/// A ledger many threads can record into.
#[derive(Debug, Default)]
pub struct SharedLedger(Mutex<UsageLedger>);

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, response: &ChatResponse) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).record(response);
    }

    pub fn snapshot(&self) -> UsageLedger {
        *self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Wraps a backend and records every successful response into a ledger.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    ledger: Arc<SharedLedger>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, ledger: Arc<SharedLedger>) -> Self {
        Self { inner, ledger }
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        self.ledger.record(&response);
        Ok(response)
    }
}
