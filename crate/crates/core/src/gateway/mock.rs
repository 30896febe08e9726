//! Offline backends: a role-keyed replay queue and a feature-hashing embedder.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentRole, BackendReply, ChatBackend, EmbeddingBackend, GatewayError};
use crate::Embedding;

pub const MOCK_EMBEDDING_DIMENSION: usize = 256;

/// One scripted reply in a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockTurn {
    pub role: AgentRole,
    pub response: String,
}

impl MockTurn {
    pub fn new(role: AgentRole, response: impl Into<String>) -> Self {
        Self {
            role,
            response: response.into(),
        }
    }
}

/// Replays scripted replies, consumed in order per role.
#[derive(Debug)]
pub struct MockChat {
    queues: Mutex<HashMap<AgentRole, VecDeque<String>>>,
}

impl MockChat {
    pub fn new(turns: Vec<MockTurn>) -> Self {
        let mut queues: HashMap<AgentRole, VecDeque<String>> = HashMap::new();
        for turn in turns {
            queues
                .entry(turn.role)
                .or_default()
                .push_back(turn.response);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    /// Loads a fixture: a JSON array of `{role, response}` objects.
    pub fn from_fixture(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read mock fixture {}: {e}", path.display()))
        })?;
        let turns: Vec<MockTurn> = serde_json::from_str(&text).map_err(|e| {
            GatewayError::Config(format!("bad mock fixture {}: {e}", path.display()))
        })?;
        Ok(Self::new(turns))
    }

    pub fn remaining(&self, role: AgentRole) -> usize {
        self.queues
            .lock()
            .expect("mock queue lock poisoned")
            .get(&role)
            .map_or(0, VecDeque::len)
    }
}

impl ChatBackend for MockChat {
    fn id(&self) -> &str {
        "mock"
    }

    fn chat(
        &self,
        role: AgentRole,
        _system: &str,
        _user: &str,
    ) -> Result<BackendReply, GatewayError> {
        let text = self
            .queues
            .lock()
            .expect("mock queue lock poisoned")
            .get_mut(&role)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::Exhausted { role })?;
        Ok(BackendReply {
            text,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

/// Hashes lowercased word unigrams and bigrams into a fixed-size vector and
/// L2-normalizes it.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    /// Word n-gram features (n = 1, 2). Text without any word maps to the
    /// single feature `<empty>` so every input has a non-zero embedding.
    pub fn features(text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return vec!["<empty>".to_string()];
        }
        let mut features: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        features.extend(
            words
                .windows(2)
                .map(|pair| format!("{} {}", pair[0], pair[1])),
        );
        features
    }

    /// Bucket a feature hashes into: the first eight bytes of its SHA-256
    /// digest, big-endian, modulo the dimension.
    pub fn bucket(&self, feature: &str) -> usize {
        let digest = Sha256::digest(feature.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_be_bytes(head) % self.dimension as u64) as usize
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(MOCK_EMBEDDING_DIMENSION)
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn id(&self) -> &str {
        "mock-hash-256"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        let mut counts = vec![0.0f64; self.dimension];
        for feature in Self::features(text) {
            counts[self.bucket(&feature)] += 1.0;
        }
        let raw =
            Embedding::new(counts).map_err(|e| GatewayError::InvalidEmbedding(e.to_string()))?;
        Ok(raw.normalized())
    }
}
