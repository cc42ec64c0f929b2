use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. When unset
    /// in the environment no `Authorization` header is sent.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "PROTEGI_API_KEY".into(),
            max_in_flight: 8,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completions client with bounded retries and an in-flight limit.
pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    key: Option<ApiKey>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("id", &self.id)
            .field("endpoint", &self.config.endpoint)
            .field("key", &self.key)
            .finish()
    }
}

enum Attempt {
    Done(Vec<String>),
    Retry { status: Option<u16>, message: String, after: Option<Duration> },
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()).map(ApiKey);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            id: format!("remote:{}", config.model),
            gate: Gate::new(config.max_in_flight),
            config,
            key,
            client,
        })
    }

    fn attempt(&self, req: &CompletionRequest, n: u32) -> Attempt {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.temperature,
            "n": n,
            "max_tokens": req.max_tokens,
        });
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.key {
            builder = builder.bearer_auth(&key.0);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    status: None,
                    message: e.to_string(),
                    after: None,
                }
            }
        };
        let status = resp.status();
        if status.is_success() {
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => return Attempt::Fatal(BackendError::Parse(e.to_string())),
            };
            return match parse_choices(&text) {
                Ok(texts) => Attempt::Done(texts),
                Err(e) => Attempt::Fatal(e),
            };
        }
        let code = status.as_u16();
        if code == 429 || status.is_server_error() {
            let after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Attempt::Retry {
                status: Some(code),
                message: status.to_string(),
                after,
            };
        }
        Attempt::Fatal(BackendError::Status { status: code, attempts: 1 })
    }

    fn call(&self, req: &CompletionRequest, n: u32) -> Result<Vec<String>, BackendError> {
        let policy = &self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.gate.acquire();
                self.attempt(req, n)
            };
            match outcome {
                Attempt::Done(texts) => return Ok(texts),
                Attempt::Fatal(BackendError::Status { status, .. }) => {
                    return Err(BackendError::Status { status, attempts })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { status, message, after } => {
                    if attempts > policy.max_retries {
                        return Err(match status {
                            Some(status) => BackendError::Status { status, attempts },
                            None => BackendError::Transport { message, attempts },
                        });
                    }
                    let mut delay = policy.delay(attempts - 1);
                    if let Some(after) = after {
                        delay = delay.max(after).min(Duration::from_millis(policy.max_backoff_ms));
                    }
                    tracing::debug!(attempts, ?status, ?delay, "retrying completion request");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

fn parse_choices(body: &str) -> Result<Vec<String>, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::Parse(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(|c| c.as_array())
        .ok_or_else(|| BackendError::Parse("reply has no `choices` array".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .or_else(|| c.get("text"))
                .and_then(|t| t.as_str())
                .map(str::to_string)
                .ok_or_else(|| BackendError::Parse("choice without message content".into()))
        })
        .collect()
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        let wanted = req.n_samples as usize;
        let mut texts = Vec::with_capacity(wanted);
        // Some servers cap or ignore `n`; top up with further calls.
        for _ in 0..wanted {
            let missing = (wanted - texts.len()) as u32;
            let got = self.call(req, missing)?;
            if got.is_empty() {
                return Err(BackendError::Parse("reply contained no choices".into()));
            }
            texts.extend(got);
            if texts.len() >= wanted {
                break;
            }
        }
        if texts.len() < wanted {
            return Err(BackendError::Parse(format!(
                "expected {wanted} choices, got {}",
                texts.len()
            )));
        }
        texts.truncate(wanted);
        Ok(CompletionResponse {
            texts,
            backend_id: self.id.clone(),
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
        assert_eq!(p.delay(80), Duration::from_millis(350));
    }

    #[test]
    fn choice_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}},{"text":"No"}]}"#;
        assert_eq!(parse_choices(body).unwrap(), ["Yes", "No"]);
        assert!(matches!(parse_choices("{}"), Err(BackendError::Parse(_))));
        assert!(matches!(parse_choices("not json"), Err(BackendError::Parse(_))));
    }

    #[test]
    fn debug_never_shows_the_key() {
        std::env::set_var("PROTEGI_TEST_KEY_DEBUG", "sk-secret-value");
        let backend = RemoteBackend::new(RemoteConfig {
            api_key_env: "PROTEGI_TEST_KEY_DEBUG".into(),
            ..RemoteConfig::default()
        })
        .unwrap();
        let shown = format!("{backend:?}");
        assert!(!shown.contains("sk-secret-value"));
        assert!(shown.contains("redacted"));
    }
}
