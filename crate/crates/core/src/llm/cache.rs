use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::seed;

/// Content address of a request.
///
/// Covers prompt text, temperature, sample count, token limit and backend
/// id. Requests with temperature > 0 also fold in `nonce`, so sampled calls
/// are reused within one run but drawn afresh in the next.
pub fn cache_key(req: &CompletionRequest, backend_id: &str, nonce: u64) -> String {
    let nonce_bytes = if req.temperature > 0.0 {
        nonce.to_le_bytes().to_vec()
    } else {
        Vec::new()
    };
    let d = seed::digest(&[
        b"completion-v1",
        req.prompt_text.as_bytes(),
        &req.temperature.to_bits().to_le_bytes(),
        &req.n_samples.to_le_bytes(),
        &req.max_tokens.to_le_bytes(),
        backend_id.as_bytes(),
        &nonce_bytes,
    ]);
    hex::encode(d)
}

/// Disk cache in front of another backend: one JSON file per key.
///
/// Concurrent requests for the same key are serialized, so a miss is paid
/// for once. Files are written to a temporary name and renamed into place.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    nonce: u64,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl<B: Backend> CachedBackend<B> {
    /// Uses a fresh random nonce, i.e. starts a new run.
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        Self::with_nonce(inner, dir, rand::random())
    }

    pub fn with_nonce(inner: B, dir: impl Into<PathBuf>, nonce: u64) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir,
            nonce,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read(&self, path: &Path) -> Option<CompletionResponse> {
        let body = fs::read(path).ok()?;
        serde_json::from_slice(&body).ok()
    }

    fn write(&self, path: &Path, resp: &CompletionResponse) -> Result<(), BackendError> {
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        let body = serde_json::to_vec(resp).map_err(|e| BackendError::Cache(e.to_string()))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&body).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        let key = cache_key(req, self.inner.id(), self.nonce);
        let path = self.dir.join(format!("{key}.json"));
        let lock = self.key_lock(&key);
        let _guard = lock.lock().expect("cache key lock poisoned");
        if let Some(mut hit) = self.read(&path) {
            if hit.texts.len() == req.n_samples as usize {
                hit.cached = true;
                return Ok(hit);
            }
        }
        let mut resp = self.inner.complete(req)?;
        resp.cached = false;
        self.write(&path, &resp)?;
        Ok(resp)
    }
}
