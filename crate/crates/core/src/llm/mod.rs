//! Chat-completion service boundary and the offline rule-oracle stub.

mod stub;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atcot::PromptBundle;
use crate::transport::{EndpointConfig, HttpClient, TransportError};

pub use stub::{default_markers, stub_complete, StubPolicy};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("response has no choices[0].message.content")]
    EmptyResponse,
    #[error("invalid LLM config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig::default(),
            model: "qwen3-14b".into(),
            temperature: 0.0,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        self.endpoint.validate()?;
        if self.model.trim().is_empty() {
            return Err(LlmError::Config("empty model name".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub latency: Duration,
    pub usage: Option<serde_json::Value>,
}

/// Shared, thread-safe client for an OpenAI-compatible `chat/completions` endpoint.
#[derive(Debug)]
pub struct LlmClient {
    cfg: LlmEndpointConfig,
    http: HttpClient,
}

impl LlmClient {
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let http = HttpClient::new(cfg.endpoint.clone())?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> serde_json::Value {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.cfg.temperature,
        })
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<Completion, LlmError> {
        let (resp, latency) = self.http.post_json("chat/completions", &self.request_body(bundle))?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or(LlmError::EmptyResponse)?
            .to_string();
        Ok(Completion {
            content,
            latency,
            usage: resp.get("usage").cloned(),
        })
    }
}

/// Either the live endpoint or the deterministic stub.
#[derive(Debug)]
pub enum LlmBackend {
    Stub(StubPolicy),
    Remote(LlmClient),
}

impl LlmBackend {
    pub fn complete(&self, bundle: &PromptBundle) -> Result<Completion, LlmError> {
        match self {
            LlmBackend::Stub(policy) => {
                let started = std::time::Instant::now();
                let content = stub_complete(policy, bundle);
                Ok(Completion {
                    content,
                    latency: started.elapsed(),
                    usage: None,
                })
            }
            LlmBackend::Remote(client) => client.complete(bundle),
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(self, LlmBackend::Stub(_))
    }
}
