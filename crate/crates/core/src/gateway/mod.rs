//! Uniform access to chat completion and text embedding.
//!
//! A [`Gateway`] pairs a chat backend with an embedding backend and keeps a
//! per-run [`UsageLedger`]. Backends are shared across runs; call
//! [`Gateway::fork`] to give each run its own ledger.

mod http;
mod ledger;
mod mock;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::Embedding;

pub use http::{HttpBackend, HttpBackendConfig};
pub use ledger::{ChatExchange, UsageLedger, UsageTotals};
pub use mock::{HashingEmbedder, MockChat, MockTurn, MOCK_EMBEDDING_DIMENSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Interpreter,
    Decomposer,
    Profiler,
    Generator,
    Debugger,
    Summarizer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 6] = [
        AgentRole::Interpreter,
        AgentRole::Decomposer,
        AgentRole::Profiler,
        AgentRole::Generator,
        AgentRole::Debugger,
        AgentRole::Summarizer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Interpreter => "interpreter",
            AgentRole::Decomposer => "decomposer",
            AgentRole::Profiler => "profiler",
            AgentRole::Generator => "generator",
            AgentRole::Debugger => "debugger",
            AgentRole::Summarizer => "summarizer",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| GatewayError::Config(format!("unknown agent role `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend refused the request: {0}")]
    Refusal(String),
    #[error("mock gateway exhausted: no scripted turn left for role `{role}`")]
    Exhausted { role: AgentRole },
    #[error("invalid embedding from backend: {0}")]
    InvalidEmbedding(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

/// A backend's answer before accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    /// Backend-reported usage, when the backend reports any.
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, role: AgentRole, system: &str, user: &str)
        -> Result<BackendReply, GatewayError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, GatewayError>;
}

/// Whitespace-token count, the accounting used when a backend reports none.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    ledger: Arc<Mutex<UsageLedger>>,
    round: Arc<AtomicU32>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("chat", &self.chat.id())
            .field("embedder", &self.embedder.id())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            chat,
            embedder,
            ledger: Arc::new(Mutex::new(UsageLedger::default())),
            round: Arc::new(AtomicU32::new(0)),
            clock: Arc::new(SystemClock::new()),
            retry: RetryPolicy::default(),
        }
    }

    /// Mock chat replaying `turns` plus the hashing embedder.
    pub fn mock(turns: Vec<MockTurn>) -> Self {
        Self::new(
            Arc::new(MockChat::new(turns)),
            Arc::new(HashingEmbedder::default()),
        )
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Same backends, fresh ledger and round tag.
    pub fn fork(&self) -> Self {
        Self {
            chat: Arc::clone(&self.chat),
            embedder: Arc::clone(&self.embedder),
            ledger: Arc::new(Mutex::new(UsageLedger::default())),
            round: Arc::new(AtomicU32::new(0)),
            clock: Arc::clone(&self.clock),
            retry: self.retry,
        }
    }

    /// Replaces the chat backend, keeping embedder and accounting.
    pub fn with_chat(&self, chat: Arc<dyn ChatBackend>) -> Self {
        Self {
            chat,
            ..self.fork()
        }
    }

    pub fn chat_backend_id(&self) -> &str {
        self.chat.id()
    }

    pub fn embedding_backend_id(&self) -> &str {
        self.embedder.id()
    }

    pub fn embedding_dimension(&self) -> usize {
        self.embedder.dimension()
    }

    /// Tags subsequent exchanges with a workflow round (0 = outside any round).
    pub fn set_round(&self, round: u32) {
        self.round.store(round, Ordering::SeqCst);
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn complete(
        &self,
        role: AgentRole,
        system_prompt: &str,
        user_message: &str,
    ) -> Result<(String, ChatExchange), GatewayError> {
        let started = self.clock.now();
        let reply = self.with_retries(|| self.chat.chat(role, system_prompt, user_message))?;
        let exchange = ChatExchange {
            role,
            round: self.round.load(Ordering::SeqCst),
            system_prompt: system_prompt.to_string(),
            user_message: user_message.to_string(),
            prompt_tokens: reply.prompt_tokens.unwrap_or_else(|| {
                whitespace_tokens(system_prompt) + whitespace_tokens(user_message)
            }),
            completion_tokens: reply
                .completion_tokens
                .unwrap_or_else(|| whitespace_tokens(&reply.text)),
            response: reply.text.clone(),
            latency: self.clock.since(started).as_secs_f64(),
            backend_id: self.chat.id().to_string(),
        };
        self.ledger
            .lock()
            .expect("ledger lock poisoned")
            .record(exchange.clone());
        Ok((reply.text, exchange))
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        let vector = self.with_retries(|| self.embedder.embed(text))?;
        if vector.dimension() != self.embedder.dimension() {
            return Err(GatewayError::InvalidEmbedding(format!(
                "expected dimension {}, got {}",
                self.embedder.dimension(),
                vector.dimension()
            )));
        }
        Ok(vector)
    }

    /// Snapshot of this run's ledger.
    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock poisoned").clone()
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(err) if err.is_retryable() && attempt < self.retry.max_retries => {
                    log::warn!("retrying after transport error: {err}");
                    thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
