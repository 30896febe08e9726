//! Chat and embedding over an OpenAI-compatible HTTP API.

use std::time::Duration;

use serde_json::{json, Value};

use super::{AgentRole, BackendReply, ChatBackend, EmbeddingBackend, GatewayError};
use crate::Embedding;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    /// Bearer token, read by the caller from the configured variable.
    pub api_key: Option<String>,
    pub timeout: Duration,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let id = format!("http:{}", config.chat_model);
        Self { config, agent, id }
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut request = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(mut response) => response
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| GatewayError::Transport(format!("unreadable response: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(GatewayError::Transport(format!("HTTP {code} from {url}")))
            }
            Err(ureq::Error::StatusCode(code)) => {
                Err(GatewayError::Refusal(format!("HTTP {code} from {url}")))
            }
            Err(e) => Err(GatewayError::Transport(e.to_string())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(
        &self,
        _role: AgentRole,
        system: &str,
        user: &str,
    ) -> Result<BackendReply, GatewayError> {
        let body = json!({
            "model": self.config.chat_model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let value = self.post("chat/completions", body)?;
        parse_chat_reply(&value)
    }
}

impl EmbeddingBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.embedding_model
    }

    fn dimension(&self) -> usize {
        self.config.embedding_dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        let body = json!({"model": self.config.embedding_model, "input": text});
        let value = self.post("embeddings", body)?;
        parse_embedding_reply(&value)
    }
}

pub(crate) fn parse_chat_reply(value: &Value) -> Result<BackendReply, GatewayError> {
    let choice = &value["choices"][0];
    if choice["finish_reason"] == "content_filter" {
        return Err(GatewayError::Refusal("content filtered".into()));
    }
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::Transport("reply has no message content".into()))?
        .to_string();
    Ok(BackendReply {
        text,
        prompt_tokens: value["usage"]["prompt_tokens"].as_u64(),
        completion_tokens: value["usage"]["completion_tokens"].as_u64(),
    })
}

pub(crate) fn parse_embedding_reply(value: &Value) -> Result<Embedding, GatewayError> {
    let values = value["data"][0]["embedding"]
        .as_array()
        .ok_or_else(|| GatewayError::InvalidEmbedding("reply has no embedding".into()))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| GatewayError::InvalidEmbedding("non-numeric coordinate".into()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Embedding::new(values).map_err(|e| GatewayError::InvalidEmbedding(e.to_string()))
}
