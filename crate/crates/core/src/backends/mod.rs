//! Contracts for the external model services and their in-process stand-ins.
//!
//! Three services are consumed: text generation (used in two roles, generator
//! and summarizer, which share one contract and differ only by endpoint),
//! sentence embedding, and speech synthesis. [`mock`] provides deterministic
//! implementations that every test and the offline demo run against; [`http`]
//! speaks the JSON wire protocol to real services.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpEmbedder, HttpGenerator, HttpSpeech, RetryPolicy};
pub use mock::{MockEmbedder, MockGenerator, MockSpeech, MOCK_EMBED_DIM};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
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
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn new(messages: Vec<Message>, seed: u64) -> Self {
        Self {
            messages,
            temperature: 0.2,
            seed,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub finish: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechRequest {
    pub text: String,
    pub voice: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechResponse {
    pub audio: Vec<u8>,
    pub duration_ms: u64,
}

/// Chat-completions style text generation. Used for both the generator and
/// the summarizer role.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

pub trait Embedder: Send + Sync {
    /// Dimension declared by the service; every returned vector must have it.
    fn dim(&self) -> usize;
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, req: &SpeechRequest) -> Result<SpeechResponse, BackendError>;
}

impl<T: TextGenerator + ?Sized> TextGenerator for std::sync::Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(req)
    }
}

impl<T: SpeechSynthesizer + ?Sized> SpeechSynthesizer for std::sync::Arc<T> {
    fn synthesize(&self, req: &SpeechRequest) -> Result<SpeechResponse, BackendError> {
        (**self).synthesize(req)
    }
}

/// Checks a generation response against its contract (non-empty text).
pub(crate) fn check_generation(
    resp: GenerationResponse,
) -> Result<GenerationResponse, BackendError> {
    if resp.text.trim().is_empty() {
        return Err(BackendError::Unavailable(
            "generation backend returned empty text".into(),
        ));
    }
    Ok(resp)
}

/// Embeds a single text, returning its vector.
pub fn embed_one(emb: &dyn Embedder, text: &str) -> Result<Vec<f64>, BackendError> {
    let resp = emb.embed(&EmbeddingRequest {
        texts: vec![text.to_string()],
    })?;
    resp.vectors
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Unavailable("embedding backend returned no vectors".into()))
}

/// Convenience wrapper: single user message with a system preamble.
pub fn complete(
    gen: &dyn TextGenerator,
    system: &str,
    user: String,
    seed: u64,
) -> Result<String, BackendError> {
    let req = GenerationRequest::new(vec![Message::system(system), Message::user(user)], seed);
    gen.generate(&req).map(|r| r.text)
}
