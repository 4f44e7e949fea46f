//! JSON-over-HTTP completion and embedding backends.
//!
//! Completion: `POST {base_url}/complete` with `{model, messages, temperature}`,
//! reply `{text}`. Embedding: `POST {base_url}/embed` with `{model, input}`,
//! reply `{embedding}`. Both send `Authorization: Bearer <key>`.

use std::sync::OnceLock;
use std::time::Duration;

use gib_core::guidelines::Embedder;
use gib_core::router::{CompletionBackend, CompletionRequest, Message};
use gib_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RemoteConfig;

#[derive(Debug, Serialize, Deserialize)]
pub struct CompletionWire {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompletionReply {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingWire {
    pub model: String,
    pub input: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingReply {
    pub embedding: Vec<f64>,
}

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{path}", base.trim_end_matches('/'))
}

/// Rate limits, server errors and network failures are worth retrying;
/// other client errors are not.
fn transport_error(e: ureq::Error) -> Error {
    let retryable = match &e {
        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed => true,
        _ => false,
    };
    Error::Transport {
        message: e.to_string(),
        retryable,
    }
}

fn post<B: Serialize, R: for<'de> Deserialize<'de>>(agent: &ureq::Agent, url: &str, key: &str, body: &B) -> Result<R> {
    let mut response = agent
        .post(url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(body)
        .map_err(transport_error)?;
    response.body_mut().read_json::<R>().map_err(|e| Error::Transport {
        message: format!("malformed reply from {url}: {e}"),
        retryable: false,
    })
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: String,
}

impl RemoteBackend {
    pub fn new(config: &RemoteConfig, api_key: String) -> Self {
        RemoteBackend {
            agent: agent(config.timeout_secs),
            url: endpoint(&config.base_url, "complete"),
            model: config.model.clone(),
            api_key,
        }
    }
}

impl CompletionBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = CompletionWire {
            model: self.model.clone(),
            messages: request.messages.clone(),
            temperature: request.temperature,
        };
        let reply: CompletionReply = post(&self.agent, &self.url, &self.api_key, &body)?;
        Ok(reply.text)
    }
}

pub struct RemoteEmbedder {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: String,
    dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(config: &RemoteConfig, model: &str, api_key: String) -> Self {
        RemoteEmbedder {
            agent: agent(config.timeout_secs),
            url: endpoint(&config.base_url, "embed"),
            model: model.to_string(),
            api_key,
            dim: OnceLock::new(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = EmbeddingWire {
            model: self.model.clone(),
            input: text.to_string(),
        };
        let reply: EmbeddingReply = post(&self.agent, &self.url, &self.api_key, &body)?;
        let v = reply.embedding;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("remote embedding is empty or non-finite".into()));
        }
        let dim = *self.dim.get_or_init(|| v.len());
        if v.len() != dim {
            return Err(Error::Schema(format!("remote embedding has {} dims, expected {dim}", v.len())));
        }
        Ok(v)
    }
}
