//! HTTP clients for the JSON wire protocol.
//!
//! ```text
//! POST {base}/generate  {"messages":[{"role","content"}],"temperature","seed","max_tokens"} -> {"text","finish"}
//! POST {base}/embed     {"texts":[str]}                                                   -> {"vectors":[[f64]],"dim"}
//! GET  {base}/meta                                                                        -> {"dim"}
//! POST {base}/speak     {"text","voice"}                      -> audio bytes, header X-Duration-Ms
//! ```

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    check_generation, BackendError, Embedder, EmbeddingRequest, EmbeddingResponse,
    GenerationRequest, GenerationResponse, SpeechRequest, SpeechResponse, SpeechSynthesizer,
    TextGenerator,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before retry `k` (0-based) is `base_backoff * 2^k`.
    pub base_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_backoff.saturating_mul(1u32 << retry.min(16))
    }
}

/// Counting semaphore bounding concurrent requests to one backend.
#[derive(Debug)]
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            count: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared transport: agent, auth, retry loop.
#[derive(Debug)]
struct Transport {
    base: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    policy: RetryPolicy,
    in_flight: InFlight,
}

enum Failure {
    Retryable(BackendError),
    Fatal(BackendError),
}

fn classify(err: ureq::Error) -> Failure {
    match err {
        ureq::Error::StatusCode(code) if (400..500).contains(&code) => {
            Failure::Fatal(BackendError::Rejected(format!("HTTP {code}")))
        }
        ureq::Error::StatusCode(code) => {
            Failure::Retryable(BackendError::Unavailable(format!("HTTP {code}")))
        }
        ureq::Error::Timeout(t) => Failure::Retryable(BackendError::Timeout(t.to_string())),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
            Failure::Retryable(BackendError::Timeout(e.to_string()))
        }
        other => Failure::Retryable(BackendError::Unavailable(other.to_string())),
    }
}

impl Transport {
    fn new(base: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            api_key,
            agent,
            in_flight: InFlight::new(policy.max_in_flight),
            policy,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base, path)
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, Failure>,
    ) -> Result<T, BackendError> {
        let _permit = self.in_flight.acquire();
        let mut last = BackendError::Unavailable("no attempt made".into());
        for attempt in 0..self.policy.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.policy.backoff(attempt - 1));
            }
            match call() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    tracing::debug!(url = %self.base, attempt, error = %e, "backend call failed");
                    last = e;
                }
            }
        }
        Err(match last {
            BackendError::Timeout(m) => BackendError::Timeout(m),
            BackendError::Rejected(m) => BackendError::Rejected(m),
            BackendError::Unavailable(m) => {
                BackendError::Unavailable(format!("{m} (after {} attempts)", self.policy.attempts))
            }
        })
    }

    fn post_json<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, BackendError> {
        let url = self.url(path);
        self.with_retries(|| {
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let resp = req.send_json(body).map_err(classify)?;
            resp.into_body().read_json::<T>().map_err(|e| {
                Failure::Fatal(BackendError::Unavailable(format!("bad response body: {e}")))
            })
        })
    }
}

#[derive(Debug)]
pub struct HttpGenerator {
    transport: Transport,
}

impl HttpGenerator {
    pub fn new(base: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            transport: Transport::new(base, api_key, policy),
        }
    }
}

impl TextGenerator for HttpGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let body = serde_json::to_value(req).expect("request serializes");
        check_generation(self.transport.post_json("generate", &body)?)
    }
}

#[derive(Debug)]
pub struct HttpEmbedder {
    transport: Transport,
    dim: usize,
}

#[derive(Deserialize)]
struct Meta {
    dim: usize,
}

impl HttpEmbedder {
    /// Connects and performs the `GET /meta` handshake to learn the dimension.
    pub fn connect(
        base: &str,
        api_key: Option<String>,
        policy: RetryPolicy,
    ) -> Result<Self, BackendError> {
        let transport = Transport::new(base, api_key, policy);
        let url = transport.url("meta");
        let meta: Meta = transport.with_retries(|| {
            let mut req = transport.agent.get(&url);
            if let Some(key) = &transport.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let resp = req.call().map_err(classify)?;
            resp.into_body().read_json::<Meta>().map_err(|e| {
                Failure::Fatal(BackendError::Unavailable(format!("bad meta body: {e}")))
            })
        })?;
        if meta.dim == 0 {
            return Err(BackendError::Unavailable(
                "embedding backend declared dim 0".into(),
            ));
        }
        Ok(Self {
            transport,
            dim: meta.dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        let body = json!({ "texts": req.texts });
        let resp: EmbeddingResponse = self.transport.post_json("embed", &body)?;
        if resp.vectors.len() != req.texts.len() {
            return Err(BackendError::Unavailable(format!(
                "expected {} vectors, got {}",
                req.texts.len(),
                resp.vectors.len()
            )));
        }
        Ok(resp)
    }
}

#[derive(Debug)]
pub struct HttpSpeech {
    transport: Transport,
}

impl HttpSpeech {
    pub fn new(base: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            transport: Transport::new(base, api_key, policy),
        }
    }
}

impl SpeechSynthesizer for HttpSpeech {
    fn synthesize(&self, req: &SpeechRequest) -> Result<SpeechResponse, BackendError> {
        let url = self.transport.url("speak");
        let body = json!({ "text": req.text, "voice": req.voice });
        let chars = req.text.chars().count() as u64;
        self.transport.with_retries(|| {
            let mut r = self.transport.agent.post(&url);
            if let Some(key) = &self.transport.api_key {
                r = r.header("Authorization", &format!("Bearer {key}"));
            }
            let resp = r.send_json(&body).map_err(classify)?;
            let duration_ms = resp
                .headers()
                .get("X-Duration-Ms")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok());
            let audio = resp
                .into_body()
                .read_to_vec()
                .map_err(|e| Failure::Retryable(BackendError::Unavailable(e.to_string())))?;
            Ok(SpeechResponse {
                audio,
                duration_ms: duration_ms.unwrap_or(chars * super::mock::MOCK_MS_PER_CHAR),
            })
        })
    }
}
