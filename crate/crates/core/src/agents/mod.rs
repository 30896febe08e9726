//! Prompt-driven agents: each fills its system-prompt template, calls the
//! gateway, and parses the reply into a typed result.
//!
//! Agents receive only instructions, input paths and derived metadata, never
//! a full task spec, so ground-truth locations cannot reach a prompt.

mod codegen;
mod explore;
mod intent;
mod meta;
mod plan;

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::react::ReactError;

pub use codegen::{debug, generate, last_fenced_block, DebugFix, NO_EXEMPLARS};
pub use explore::{profile, summarize, Exploration, ExplorationSettings, SummaryInput};
pub use intent::{interpret, IntentRecord, TaskType, TASK_TYPES};
pub use meta::{FileMeta, TaskMeta};
pub use plan::{decompose, SubtaskPlan, SubtaskStep};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    React(#[from] ReactError),
    #[error("interpreter reply is not a valid intent record: {0}")]
    UnparseableIntent(String),
    #[error("decomposer reply is not a valid plan: {0}")]
    UnparseablePlan(String),
    #[error("decomposer used a task type outside the allowed set: `{0}`")]
    UnknownTaskType(String),
    #[error("generator reply has no fenced code block")]
    NoCodeBlock,
    #[error("debugger reply is not a valid fix: {0}")]
    UnparseableFix(String),
}

impl AgentError {
    /// The underlying gateway failure, if any.
    pub fn gateway(&self) -> Option<&GatewayError> {
        match self {
            AgentError::Gateway(e) | AgentError::React(ReactError::Gateway(e)) => Some(e),
            _ => None,
        }
    }
}

/// Best-effort extraction of a JSON object from a model reply: drops code
/// fences and any prose around the outermost braces.
pub fn repair_json(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

/// Parses `reply` as JSON, retrying on its repaired form.
pub(crate) fn parse_lenient<T: serde::de::DeserializeOwned>(reply: &str) -> Result<T, String> {
    match serde_json::from_str(reply.trim()) {
        Ok(v) => Ok(v),
        Err(first) => match repair_json(reply) {
            Some(inner) => serde_json::from_str(inner).map_err(|e| e.to_string()),
            None => Err(first.to_string()),
        },
    }
}
