use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{parse_lenient, AgentError, TaskMeta};
use crate::gateway::{AgentRole, Gateway};
use crate::prompts;

/// The task-type labels the interpreter may choose from, verbatim.
pub const TASK_TYPES: [&str; 16] = [
    "TableCleaning-ErrorDetectionANDCorrection",
    "TableCleaning-ColumnTypeAnnotation",
    "TableCleaning-DataImputation",
    "TableCleaning-Deduplication",
    "TableTransformation-RowToRowTransform",
    "TableTransformation-SplittingANDConcatenation",
    "TableTransformation-RowColumnSwapping",
    "TableTransformation-Filtering",
    "TableTransformation-Grouping",
    "TableTransformation-Sorting",
    "TableTransformation-ListExtraction",
    "TableAugmentation-RowPopulation",
    "TableAugmentation-SchemaAugmentation",
    "TableAugmentation-ColumnAugmentation",
    "TableMatching-SchemaMatching",
    "TableMatching-EntityMatching",
];

/// One of [`TASK_TYPES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskType(&'static str);

impl TaskType {
    pub fn parse(label: &str) -> Option<Self> {
        TASK_TYPES
            .iter()
            .find(|t| **t == label)
            .map(|t| TaskType(t))
    }

    pub fn all() -> impl Iterator<Item = TaskType> {
        TASK_TYPES.iter().map(|t| TaskType(t))
    }

    pub fn as_str(self) -> &'static str {
        self.0
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl Serialize for TaskType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0)
    }
}

impl<'de> Deserialize<'de> for TaskType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        TaskType::parse(&label)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown task type `{label}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub operation: String,
    pub reason: String,
    #[serde(rename = "is_dag")]
    pub is_multi_step: bool,
    pub task_type: TaskType,
    pub suffix: String,
}

impl IntentRecord {
    /// The operator specification shown to the generator: operation, reason,
    /// task type and suffix.
    pub fn specification(&self) -> String {
        serde_json::json!({
            "operation": self.operation,
            "reason": self.reason,
            "task_type": self.task_type,
            "suffix": self.suffix,
        })
        .to_string()
    }
}

const REPROMPT: &str = "Your previous reply could not be parsed as the required JSON object";

/// Parses the instruction into an intent record. One repair pass, then one
/// reprompt, before giving up.
pub fn interpret(
    instruction: &str,
    meta: &TaskMeta,
    gateway: &Gateway,
) -> Result<IntentRecord, AgentError> {
    let system = prompts::fill(prompts::INTERPRETER, &[("task_meta", &meta.to_prompt())]);
    let (reply, _) = gateway.complete(AgentRole::Interpreter, &system, instruction)?;
    let first_error = match parse_lenient::<IntentRecord>(&reply) {
        Ok(intent) => return Ok(intent),
        Err(e) => e,
    };
    let retry =
        format!("{instruction}\n\n{REPROMPT} ({first_error}). Respond with only the JSON object.");
    let (reply, _) = gateway.complete(AgentRole::Interpreter, &system, &retry)?;
    parse_lenient::<IntentRecord>(&reply).map_err(AgentError::UnparseableIntent)
}
