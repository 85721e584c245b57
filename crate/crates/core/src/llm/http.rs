use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, ChatRequest, ChatResponse};
use crate::error::{BackendError, Error, Result};

/// Raw HTTP answer: status plus body text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

/// The single POST the HTTP backend needs. Swapped out in tests.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<HttpReply, TransportError> {
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if !bearer.is_empty() {
            request = request.header("Authorization", &format!("Bearer {bearer}"));
        }
        let classify = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connect(other.to_string()),
        };
        let mut response = request.send_json(body).map_err(classify)?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(classify)?;
        Ok(HttpReply { status, body })
    }
}

/// Exponential backoff: `base * 2^attempt`, scaled by a uniform jitter factor
/// in `[1 - jitter, 1 + jitter]`, never above `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base: Duration::from_millis(500), cap: Duration::from_secs(8), jitter: 0.2 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt + 1`; `unit` in `[-1, 1]` picks the
    /// jitter.
    pub fn delay(&self, attempt: u32, unit: f64) -> Duration {
        let raw = self.base.as_secs_f64() * 2f64.powi(attempt.min(30) as i32);
        let jittered = raw * (1.0 + self.jitter * unit.clamp(-1.0, 1.0));
        Duration::from_secs_f64(jittered.clamp(0.0, self.cap.as_secs_f64()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

impl<F: Fn(Duration) + Send + Sync> Sleeper for F {
    fn sleep(&self, duration: Duration) {
        self(duration)
    }
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

/// Retry loop shared by the chat and embedding clients.
pub(crate) struct Retrier {
    pub(crate) policy: RetryPolicy,
    pub(crate) sleeper: Box<dyn Sleeper>,
    pub(crate) max_retries: u32,
}

impl Retrier {
    pub(crate) fn new(max_retries: u32) -> Self {
        Self { policy: RetryPolicy::default(), sleeper: Box::new(std::thread::sleep), max_retries }
    }

    /// POSTs until a 2xx arrives; returns its body and the attempts used.
    pub(crate) fn post(
        &self,
        transport: &dyn Transport,
        url: &str,
        bearer: &str,
        body: &Value,
    ) -> Result<(String, u32), BackendError> {
        let max_attempts = self.max_retries + 1;
        let mut rng = rand::rng();
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            match transport.post_json(url, bearer, body) {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok((reply.body, attempt)),
                Ok(reply) if retryable_status(reply.status) => {
                    last_status = Some(reply.status);
                    last_message = snippet(&reply.body);
                }
                Ok(reply) => return Err(BackendError::Rejected { status: reply.status, body: snippet(&reply.body) }),
                Err(e) => {
                    last_status = None;
                    last_message = e.to_string();
                }
            }
            if attempt < max_attempts {
                log::warn!("{url} attempt {attempt}/{max_attempts} failed (status {last_status:?}): {last_message}");
                self.sleeper.sleep(self.policy.delay(attempt - 1, rng.random_range(-1.0..=1.0)));
            }
        }
        Err(BackendError::Exhausted { attempts: max_attempts, status: last_status, last: last_message })
    }
}

/// OpenAI-compatible `/chat/completions` client with retry.
pub struct HttpBackend {
    config: BackendConfig,
    transport: Box<dyn Transport>,
    retrier: Retrier,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        let transport = UreqTransport::new(config.timeout_duration());
        Self::with_transport(config, Box::new(transport))
    }

    pub fn with_transport(config: BackendConfig, transport: Box<dyn Transport>) -> Result<Self> {
        config.validate()?;
        if config.base_url.trim().is_empty() {
            return Err(Error::Config(format!("no base_url for provider `{}`", config.provider_name)));
        }
        let retrier = Retrier::new(config.max_retries);
        Ok(Self { config, transport, retrier })
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.retrier.policy = policy;
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Sleeper + 'static) -> Self {
        self.retrier.sleeper = Box::new(sleeper);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }
}

fn parse_completion(body: &str) -> Result<(String, u64, u64), BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("invalid JSON: {e}")))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
    let usage = |key: &str| value.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((text.to_owned(), usage("prompt_tokens"), usage("completion_tokens")))
}

fn snippet(body: &str) -> String {
    body.chars().take(500).collect()
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.provider_name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model_name,
            "messages": request.messages,
            "temperature": request.temperature.unwrap_or(self.config.temperature),
        });
        let started = Instant::now();
        let (reply, attempts) = self.retrier.post(self.transport.as_ref(), &url, self.config.api_key.expose(), &body)?;
        let (text, prompt_tokens, completion_tokens) = parse_completion(&reply)?;
        Ok(ChatResponse { text, prompt_tokens, completion_tokens, latency: started.elapsed().as_secs_f64(), attempts })
    }
}
