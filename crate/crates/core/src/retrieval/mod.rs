//! Embedding, cosine top-k retrieval, CoT prompt assembly and context
//! extraction.

mod index;
mod prompt;

use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{BackendError, Error, Result};
use crate::llm::{Secret, Transport, UreqTransport};

pub use index::{topk, Payload, VectorIndex};
pub use prompt::{
    assemble_cot_prompt, extract_context, extract_context_response, render_exemplar, COT_HEADER,
    DEFAULT_EXEMPLAR_K,
};

pub type EmbeddingVector = Vec<f64>;

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian seed bytes followed by `feature`.
pub fn feature_hash(seed: u64, feature: &str) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(feature.as_bytes())
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn hashing_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of unigrams and bigrams into `dimension` buckets,
/// then L2 normalization. Fully deterministic for a given seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension, seed })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimension: Self::DEFAULT_DIMENSION, seed: 0 }
    }
}

impl Embedder for HashingEmbedder {
    fn name(&self) -> &str {
        "hashing"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        let tokens = hashing_tokens(trimmed);
        let mut features: Vec<String> = tokens.clone();
        features.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        if features.is_empty() {
            features.push(trimmed.to_owned());
        }

        let mut v = vec![0.0; self.dimension];
        for f in &features {
            let h = feature_hash(self.seed, f);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dimension as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: Secret,
    dimension: usize,
    transport: Box<dyn Transport>,
    retrier: crate::llm::Retrier,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Secret, dimension: usize, timeout: Duration) -> Result<Self> {
        Self::with_transport(base_url, model, api_key, dimension, Box::new(UreqTransport::new(timeout)))
    }

    pub fn with_transport(
        base_url: &str,
        model: &str,
        api_key: Secret,
        dimension: usize,
        transport: Box<dyn Transport>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            model: model.to_owned(),
            api_key,
            dimension,
            transport,
            retrier: crate::llm::Retrier::new(3),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({"model": self.model, "input": text});
        let (reply, _) = self.retrier.post(self.transport.as_ref(), &url, self.api_key.expose(), &body)?;
        let value: Value =
            serde_json::from_str(&reply).map_err(|e| BackendError::Protocol(format!("invalid JSON: {e}")))?;
        let vector: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| BackendError::Protocol("missing data[0].embedding".into()))?;
        if vector.len() != self.dimension {
            return Err(BackendError::Protocol(format!(
                "embedding has {} dimensions, expected {}",
                vector.len(),
                self.dimension
            ))
            .into());
        }
        Ok(vector)
    }
}
