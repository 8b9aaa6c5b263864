//! Blocking JSON-over-HTTP client with bounded concurrency and retries.
//!
//! Shared by the chat-completion client and the remote embedding provider.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_API_KEY_ENV: &str = "SCOPE_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Seeds the backoff jitter.
    pub seed: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_ms: 60_000,
            max_in_flight: 4,
            max_retries: 2,
            backoff_base_ms: 500,
            seed: 42,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.max_in_flight == 0 {
            return Err(TransportError::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(TransportError::Config("timeout must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(TransportError::Config("empty base_url".into()));
        }
        Ok(())
    }

    /// Upper bound of the jittered sleep before retry number `retry` (0-based).
    pub fn backoff_cap(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(20)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out after {attempts} attempt(s), {elapsed_ms} ms elapsed")]
    Timeout { attempts: u32, elapsed_ms: u64 },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Protocol {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

impl TransportError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            TransportError::Timeout { attempts, .. }
            | TransportError::Protocol { attempts, .. }
            | TransportError::Transport { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlightGate {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct GatePermit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(max: usize) -> Self {
        Self {
            max,
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut active = self.active.lock().expect("gate lock poisoned");
        while *active >= self.max {
            active = self.freed.wait(active).expect("gate lock poisoned");
        }
        *active += 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("gate lock poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

const BODY_EXCERPT: usize = 512;

enum Attempt {
    Done(serde_json::Value),
    Retry(TransportError),
    Fail(TransportError),
}

#[derive(Debug)]
pub struct HttpClient {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
    jitter: Mutex<ChaCha8Rng>,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, TransportError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        Ok(Self {
            gate: InFlightGate::new(cfg.max_in_flight),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed)),
            cfg,
            client,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.cfg.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    fn attempt(&self, url: &str, body: &serde_json::Value, attempts: u32, started: Instant) -> Attempt {
        let _permit = self.gate.acquire();
        let mut req = self.client.post(url).json(body);
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(TransportError::Timeout {
                    attempts,
                    elapsed_ms: started.elapsed().as_millis() as u64,
                })
            }
            Err(e) => {
                return Attempt::Retry(TransportError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(TransportError::Timeout {
                    attempts,
                    elapsed_ms: started.elapsed().as_millis() as u64,
                })
            }
            Err(e) => {
                return Attempt::Retry(TransportError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        if !status.is_success() {
            let err = TransportError::Protocol {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT).collect(),
                attempts,
            };
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(TransportError::Decode(e.to_string())),
        }
    }

    /// POSTs `body` to `{base_url}/{path}`; returns the decoded JSON and the
    /// wall-clock time spent including retries.
    pub fn post_json(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<(serde_json::Value, Duration), TransportError> {
        let url = self.url(path);
        let started = Instant::now();
        let max_attempts = self.cfg.max_retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, body, attempts, started) {
                Attempt::Done(v) => return Ok((v, started.elapsed())),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempts >= max_attempts => return Err(e),
                Attempt::Retry(_) => {
                    let cap = self.cfg.backoff_cap(attempts - 1).as_millis() as u64;
                    let wait = if cap == 0 {
                        0
                    } else {
                        self.jitter
                            .lock()
                            .expect("jitter lock poisoned")
                            .gen_range(0..=cap)
                    };
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}
