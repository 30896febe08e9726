//! Engine settings merged from defaults, a key/value file, the environment,
//! and command-line flags.
//!
//! The file format is one `key = value` per line; `#` starts a comment.
//! Keys are the [`WorkflowConfig`] field names plus the backend and runtime
//! keys below. Environment variables use the same keys upper-cased behind
//! [`ENV_PREFIX`], e.g. `TABLESMITH_MAX_ROUNDS=1`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;

use crate::clock::FrozenClock;
use crate::gateway::{
    Gateway, GatewayError, HashingEmbedder, HttpBackend, HttpBackendConfig, MockChat,
    MOCK_EMBEDDING_DIMENSION,
};
use crate::workflow::WorkflowConfig;

pub const ENV_PREFIX: &str = "TABLESMITH_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: expected `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        origin: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Real,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "real" => Ok(Self::Real),
            other => Err(format!("expected `mock` or `real`, got `{other}`")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mock => "mock",
            Self::Real => "real",
        })
    }
}

/// Key/value pairs from one source, in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigLayer {
    pub origin: String,
    pub entries: Vec<(String, String)>,
}

impl ConfigLayer {
    pub fn new(origin: impl Into<String>) -> Self {
        Self {
            origin: origin.into(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut layer = Self::new(origin);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: n + 1,
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    origin: origin.to_string(),
                    line: n + 1,
                });
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            layer.set(key, value);
        }
        Ok(layer)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Picks `TABLESMITH_*` variables out of `vars`.
    pub fn from_env<I, K, V>(vars: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut layer = Self::new("environment");
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.as_ref().strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                Some((key, v.as_ref().to_string()))
            })
            .collect();
        found.sort();
        layer.entries = found;
        layer
    }
}

/// Everything a run needs besides the task and the library.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineConfig {
    pub workflow: WorkflowConfig,
    pub backend: BackendKind,
    pub endpoint: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    /// Name of the variable holding the API key; the key itself is never stored.
    pub api_key_env: String,
    /// A fixture file, or a directory of `<task_id>.json` fixtures.
    pub mock_fixture: Option<PathBuf>,
    pub runtime_cmd: String,
    pub parallel: usize,
    /// Operator manifest.
    pub library: PathBuf,
    /// Run artifacts go under this directory.
    pub runs_dir: PathBuf,
    #[serde(serialize_with = "secs")]
    pub request_timeout: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workflow: WorkflowConfig::default(),
            backend: BackendKind::Mock,
            endpoint: "https://api.openai.com/v1".to_string(),
            chat_model: "gpt-4o".to_string(),
            embedding_model: "text-embedding-3-small".to_string(),
            embedding_dimension: 1536,
            api_key_env: "OPENAI_API_KEY".to_string(),
            mock_fixture: None,
            runtime_cmd: "python3".to_string(),
            parallel: 1,
            library: PathBuf::from("operators/manifest.json"),
            runs_dir: PathBuf::from("runs"),
            request_timeout: Duration::from_secs(120),
        }
    }
}

fn parse_value<T: FromStr>(origin: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        origin: origin.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_secs(origin: &str, key: &str, value: &str) -> Result<Duration, ConfigError> {
    let secs: f64 = parse_value(origin, key, value)?;
    Duration::try_from_secs_f64(secs).map_err(|e| ConfigError::InvalidValue {
        origin: origin.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl EngineConfig {
    /// Applies `layers` over the defaults; later layers win.
    pub fn resolve(layers: &[ConfigLayer]) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for layer in layers {
            for (key, value) in &layer.entries {
                config.apply(&layer.origin, key, value)?;
            }
        }
        Ok(config)
    }

    fn apply(&mut self, origin: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let w = &mut self.workflow;
        match key {
            "max_rounds" => w.max_rounds = parse_value(origin, key, value)?,
            "success_threshold" | "threshold" => {
                w.success_threshold = parse_value(origin, key, value)?
            }
            "top_k" => w.top_k = parse_value(origin, key, value)?,
            "sim_threshold" => w.sim_threshold = parse_value(origin, key, value)?,
            "max_profiler_steps" => w.max_profiler_steps = parse_value(origin, key, value)?,
            "max_summarizer_steps" => w.max_summarizer_steps = parse_value(origin, key, value)?,
            "max_debug_attempts" => w.max_debug_attempts = parse_value(origin, key, value)?,
            "script_timeout" => w.script_timeout = parse_secs(origin, key, value)?,
            "snippet_timeout" => w.snippet_timeout = parse_secs(origin, key, value)?,
            "summarize_on_success" => w.summarize_on_success = parse_value(origin, key, value)?,
            "backend" => self.backend = parse_value(origin, key, value)?,
            "endpoint" => self.endpoint = value.to_string(),
            "model" | "chat_model" => self.chat_model = value.to_string(),
            "embedding_model" => self.embedding_model = value.to_string(),
            "embedding_dimension" => self.embedding_dimension = parse_value(origin, key, value)?,
            "api_key_env" => self.api_key_env = value.to_string(),
            "mock_fixture" => {
                self.mock_fixture = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "runtime_cmd" => self.runtime_cmd = value.to_string(),
            "parallel" => self.parallel = parse_value(origin, key, value)?,
            "library" => self.library = PathBuf::from(value),
            "runs_dir" => self.runs_dir = PathBuf::from(value),
            "request_timeout" => self.request_timeout = parse_secs(origin, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Non-workflow settings, for echoing into run results.
    pub fn settings_echo(&self) -> serde_json::Value {
        json!({
            "backend": self.backend,
            "chat_backend": match self.backend {
                BackendKind::Mock => "mock".to_string(),
                BackendKind::Real => self.chat_model.clone(),
            },
            "embedding_backend": match self.backend {
                BackendKind::Mock => format!("mock-hash-{MOCK_EMBEDDING_DIMENSION}"),
                BackendKind::Real => self.embedding_model.clone(),
            },
            "runtime_cmd": self.runtime_cmd,
            "parallel": self.parallel,
        })
    }

    /// The mock fixture for `task_id`: `<dir>/<task_id>.json` when the
    /// configured path is a directory, otherwise the file itself. A directory
    /// without a task id yields nothing.
    pub fn fixture_for(&self, task_id: Option<&str>) -> Option<PathBuf> {
        let path = self.mock_fixture.as_ref()?;
        if !path.is_dir() {
            return Some(path.clone());
        }
        task_id.map(|id| path.join(format!("{id}.json")))
    }

    /// Builds a gateway; mock gateways use a frozen clock so reports are
    /// reproducible.
    pub fn gateway(&self, task_id: Option<&str>) -> Result<Gateway, GatewayError> {
        match self.backend {
            BackendKind::Mock => {
                let chat = match self.fixture_for(task_id) {
                    Some(path) => MockChat::from_fixture(&path)?,
                    None => MockChat::new(Vec::new()),
                };
                Ok(
                    Gateway::new(Arc::new(chat), Arc::new(HashingEmbedder::default()))
                        .with_clock(Arc::new(FrozenClock)),
                )
            }
            BackendKind::Real => {
                let api_key = std::env::var(&self.api_key_env).ok();
                let backend = Arc::new(HttpBackend::new(HttpBackendConfig {
                    endpoint: self.endpoint.clone(),
                    chat_model: self.chat_model.clone(),
                    embedding_model: self.embedding_model.clone(),
                    embedding_dimension: self.embedding_dimension,
                    api_key,
                    timeout: self.request_timeout,
                }));
                Ok(Gateway::new(backend.clone(), backend))
            }
        }
    }
}

/// Flattened `key = value` rendering of `config`, readable by [`ConfigLayer::parse`].
pub fn render(config: &EngineConfig) -> String {
    let w = &config.workflow;
    let mut map = BTreeMap::new();
    map.insert("max_rounds", w.max_rounds.to_string());
    map.insert("success_threshold", w.success_threshold.to_string());
    map.insert("top_k", w.top_k.to_string());
    map.insert("sim_threshold", w.sim_threshold.to_string());
    map.insert("max_profiler_steps", w.max_profiler_steps.to_string());
    map.insert("max_summarizer_steps", w.max_summarizer_steps.to_string());
    map.insert("max_debug_attempts", w.max_debug_attempts.to_string());
    map.insert("script_timeout", w.script_timeout.as_secs_f64().to_string());
    map.insert(
        "snippet_timeout",
        w.snippet_timeout.as_secs_f64().to_string(),
    );
    map.insert("summarize_on_success", w.summarize_on_success.to_string());
    map.insert("backend", config.backend.to_string());
    map.insert("endpoint", config.endpoint.clone());
    map.insert("chat_model", config.chat_model.clone());
    map.insert("embedding_model", config.embedding_model.clone());
    map.insert(
        "embedding_dimension",
        config.embedding_dimension.to_string(),
    );
    map.insert("api_key_env", config.api_key_env.clone());
    if let Some(p) = &config.mock_fixture {
        map.insert("mock_fixture", p.display().to_string());
    }
    map.insert("runtime_cmd", config.runtime_cmd.clone());
    map.insert("parallel", config.parallel.to_string());
    map.insert("library", config.library.display().to_string());
    map.insert("runs_dir", config.runs_dir.display().to_string());
    map.insert(
        "request_timeout",
        config.request_timeout.as_secs_f64().to_string(),
    );
    map.into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
