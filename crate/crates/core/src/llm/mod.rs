//! Text-completion backends.
//!
//! [`Backend`] is the single interface the engine talks to. Three
//! implementations ship: [`RemoteBackend`] (chat-completions over HTTP),
//! [`CachedBackend`] (disk cache wrapper) and [`SimBackend`] (deterministic
//! offline stand-in with a known optimum). [`Metered`] wraps any of them
//! and counts calls by kind.

mod cache;
mod remote;
mod sim;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CachedBackend};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use sim::{sim_accuracy, sim_classify, synthetic_dataset, SimBackend, SimProfile};

/// Token limit for classification calls: one label plus slack.
pub const CLASSIFY_MAX_TOKENS: u32 = 4;
/// Token limit for gradient, edit and paraphrase calls.
pub const META_MAX_TOKENS: u32 = 512;
/// Decoding temperature for everything except classification.
pub const META_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Classify,
    Gradient,
    Edit,
    Paraphrase,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub temperature: f64,
    pub n_samples: u32,
    pub max_tokens: u32,
    /// Audit tag; not part of the cache key.
    pub kind: CallKind,
}

impl CompletionRequest {
    /// Greedy single-sample classification call.
    pub fn classify(prompt_text: String) -> Self {
        Self {
            prompt_text,
            temperature: 0.0,
            n_samples: 1,
            max_tokens: CLASSIFY_MAX_TOKENS,
            kind: CallKind::Classify,
        }
    }

    /// Sampled meta-prompt call at temperature 1.0.
    pub fn meta(kind: CallKind, prompt_text: String, n_samples: u32) -> Self {
        Self {
            prompt_text,
            temperature: META_TEMPERATURE,
            n_samples,
            max_tokens: META_MAX_TOKENS,
            kind,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |msg: &str| Err(BackendError::InvalidRequest(msg.to_string()));
        if self.prompt_text.is_empty() {
            return bad("prompt text is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative real");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.temperature == 0.0 && self.n_samples != 1 {
            return bad("temperature 0 requires n_samples = 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub texts: Vec<String>,
    pub backend_id: String,
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed backend reply: {0}")]
    Parse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn status(&self) -> Option<u16> {
        match self {
            BackendError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Snapshot of a [`Metered`] backend's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAudit {
    pub total: u64,
    pub cache_hits: u64,
    pub failed: u64,
    pub classify: u64,
    pub gradient: u64,
    pub edit: u64,
    pub paraphrase: u64,
    pub other: u64,
}

#[derive(Debug, Default)]
struct Counters {
    total: AtomicU64,
    cache_hits: AtomicU64,
    failed: AtomicU64,
    by_kind: [AtomicU64; 5],
}

/// Counts every `complete` call exactly once, by kind. Cache hits are
/// tracked separately and are not subtracted from `total`.
pub struct Metered<B> {
    inner: B,
    counters: Counters,
}

impl<B: Backend> Metered<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counters: Counters::default(),
        }
    }

    pub fn audit(&self) -> CallAudit {
        let c = &self.counters;
        let kind = |i: usize| c.by_kind[i].load(Ordering::Relaxed);
        CallAudit {
            total: c.total.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            failed: c.failed.load(Ordering::Relaxed),
            classify: kind(0),
            gradient: kind(1),
            edit: kind(2),
            paraphrase: kind(3),
            other: kind(4),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for Metered<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let c = &self.counters;
        c.total.fetch_add(1, Ordering::Relaxed);
        let slot = match req.kind {
            CallKind::Classify => 0,
            CallKind::Gradient => 1,
            CallKind::Edit => 2,
            CallKind::Paraphrase => 3,
            CallKind::Other => 4,
        };
        c.by_kind[slot].fetch_add(1, Ordering::Relaxed);
        let result = self.inner.complete(req);
        match &result {
            Ok(resp) if resp.cached => {
                c.cache_hits.fetch_add(1, Ordering::Relaxed);
            }
            Ok(_) => {}
            Err(_) => {
                c.failed.fetch_add(1, Ordering::Relaxed);
            }
        }
        result
    }
}
