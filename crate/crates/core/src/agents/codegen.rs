//! Script generation and repair.

use serde::{Deserialize, Serialize};

use super::{parse_lenient, AgentError, IntentRecord, TaskMeta};
use crate::gateway::{AgentRole, Gateway};
use crate::library::RetrievedOperator;
use crate::prompts;
use crate::workflow::{ProfilingContext, WorkflowMemory};

/// Inserted in place of exemplars when retrieval finds nothing.
pub const NO_EXEMPLARS: &str =
    "No exemplars available: no library operator reached the similarity threshold.";

const REPROMPT: &str = "Your previous reply contained no fenced code block. \
Reply with the complete script in a single ```python ... ``` block.";

/// Contents of the last complete triple-backtick block.
pub fn last_fenced_block(reply: &str) -> Option<String> {
    let mut last = None;
    let mut current: Option<Vec<&str>> = None;
    for line in reply.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(body), true) => {
                last = Some(body.join("\n"));
                current = None;
            }
            (Some(body), false) => body.push(line),
            (None, false) => {}
        }
    }
    last
}

fn render_operators(retrieved: &[RetrievedOperator]) -> String {
    if retrieved.is_empty() {
        return NO_EXEMPLARS.to_string();
    }
    retrieved
        .iter()
        .map(|op| {
            let script = std::fs::read_to_string(&op.script_path)
                .unwrap_or_else(|e| format!("# script unavailable: {e}"));
            format!(
                "### {} ({}): {}\n```python\n{}\n```",
                op.id,
                op.sub_category,
                op.description,
                script.trim_end()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_context(context: &ProfilingContext) -> String {
    let mut out = String::from("Profiling report:\n");
    out.push_str(if context.profile.is_empty() {
        "(none)"
    } else {
        &context.profile
    });
    out.push_str("\nFeedback history:\n");
    if context.feedback_history.is_empty() {
        out.push_str("[ ]");
    }
    for record in &context.feedback_history {
        out.push_str(&format!("Round {}: score={}\n", record.round, record.score));
        if let Some(trace) = &record.error_trace {
            out.push_str(&format!("Execution error:\n{}\n", clip(trace, 2000)));
        }
        out.push_str(&format!("Insight: {}\n", record.insight));
    }
    out
}

fn render_debug_history(memory: &WorkflowMemory) -> String {
    if memory.is_empty() {
        return "[ ]".to_string();
    }
    memory
        .candidates()
        .iter()
        .map(|c| {
            format!(
                "Round {} (score={}, runnable={}):\n```python\n{}\n```",
                c.round,
                c.score,
                c.runnable,
                c.code.trim_end()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn clip(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => format!("{}…", &text[..cut]),
        None => text.to_string(),
    }
}

/// Writes the round's candidate script.
///
/// The system prompt is the template with metadata, exemplars and the
/// operator specification filled in. The user message repeats those and adds
/// the profiling context (profile, per-round scores and insights) and the
/// prior rounds' code as debug history.
pub fn generate(
    instruction: &str,
    intent: &IntentRecord,
    meta: &TaskMeta,
    context: &ProfilingContext,
    memory: &WorkflowMemory,
    gateway: &Gateway,
) -> Result<String, AgentError> {
    let meta_text = meta.to_prompt();
    let operators = render_operators(&context.retrieved);
    let spec = intent.specification();
    let system = prompts::fill(
        prompts::GENERATOR,
        &[
            ("task_meta", &meta_text),
            ("retrieved_operators", &operators),
            ("user_query", &spec),
        ],
    );
    let user = format!(
        "User request:\n{instruction}\nOperator specification:\n{spec}\nMetadata:\n{meta_text}\n\
Retrieved similar operator code snippets:\n{operators}\nContext:\n{}\nDebug history:\n{}\n",
        render_context(context),
        render_debug_history(memory),
    );
    let (reply, _) = gateway.complete(AgentRole::Generator, &system, &user)?;
    if let Some(code) = last_fenced_block(&reply) {
        return Ok(code);
    }
    let retry = format!("{user}\n{REPROMPT}");
    let (reply, _) = gateway.complete(AgentRole::Generator, &system, &retry)?;
    last_fenced_block(&reply).ok_or(AgentError::NoCodeBlock)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugFix {
    pub code: String,
    pub reason: String,
}

/// Asks for a minimal fix of a failing script.
pub fn debug(
    code: &str,
    error_trace: &str,
    instruction: &str,
    intent: &IntentRecord,
    meta: &TaskMeta,
    gateway: &Gateway,
) -> Result<DebugFix, AgentError> {
    let user = format!(
        "Original code:\n```python\n{}\n```\nError messages:\n{}\nTarget:\n{instruction}\n{}\n\
Raw data and expected data formats:\n{}\nExpected output format: {}\n",
        code.trim_end(),
        clip(error_trace, 4000),
        intent.specification(),
        meta.to_prompt(),
        intent.suffix,
    );
    let (reply, _) = gateway.complete(AgentRole::Debugger, prompts::DEBUGGER, &user)?;
    let fix: DebugFix = parse_lenient(&reply).map_err(AgentError::UnparseableFix)?;
    if fix.code.trim().is_empty() {
        return Err(AgentError::UnparseableFix("empty code".into()));
    }
    Ok(fix)
}
