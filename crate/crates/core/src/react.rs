//! The tagged reasoning/acting protocol used by the profiler and summarizer.
//!
//! A model turn carries `<THINK>…</THINK>`, `<ACTION>` + fenced code +
//! `</ACTION>`, and `<ANSWER>…</ANSWER>` blocks. Actions run as read-only
//! snippets; their stdout comes back as the next message, starting with the
//! line `[Observation]`.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AgentRole, Gateway, GatewayError};
use crate::sandbox::{ExecutionMode, ExecutionOutcome, ExecutionRequest, Sandbox, SandboxError};

pub const OBSERVATION_HEADER: &str = "[Observation]";
pub const OBSERVATION_LIMIT: usize = 4096;
pub const TRUNCATION_MARKER: &str = "…[truncated]";

const THINK: (&str, &str) = ("<THINK>", "</THINK>");
const ACTION: (&str, &str) = ("<ACTION>", "</ACTION>");
const ANSWER: (&str, &str) = ("<ANSWER>", "</ANSWER>");
const ALL_TAGS: [&str; 6] = [THINK.0, THINK.1, ACTION.0, ACTION.1, ANSWER.0, ANSWER.1];

#[derive(Debug, Error)]
pub enum ReactError {
    #[error("malformed turn: {0}")]
    MalformedTurn(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagKind {
    Think,
    Action,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEvent {
    pub kind: TagKind,
    /// Trimmed block text; for actions, the code inside the fence.
    pub body: String,
}

impl TagEvent {
    fn new(kind: TagKind, body: impl Into<String>) -> Self {
        Self {
            kind,
            body: body.into(),
        }
    }
}

/// Extracts every well-formed block in document order. Text outside tags is
/// ignored.
pub fn parse_turn(turn: &str) -> Result<Vec<TagEvent>, ReactError> {
    let mut events = Vec::new();
    let mut rest = turn;
    loop {
        let next = [
            (THINK, TagKind::Think),
            (ACTION, TagKind::Action),
            (ANSWER, TagKind::Answer),
        ]
        .into_iter()
        .filter_map(|(tags, kind)| rest.find(tags.0).map(|at| (at, tags, kind)))
        .min_by_key(|(at, _, _)| *at);
        let Some((at, (open, close), kind)) = next else {
            if let Some(stray) = [THINK.1, ACTION.1, ANSWER.1]
                .iter()
                .find(|t| rest.contains(**t))
            {
                return Err(malformed(format!("closing {stray} without an opening tag")));
            }
            return Ok(events);
        };
        let outside = &rest[..at];
        if let Some(stray) = [THINK.1, ACTION.1, ANSWER.1]
            .iter()
            .find(|t| outside.contains(**t))
        {
            return Err(malformed(format!("closing {stray} without an opening tag")));
        }
        let body_start = at + open.len();
        let body_len = rest[body_start..]
            .find(close)
            .ok_or_else(|| malformed(format!("{open} is never closed")))?;
        let body = &rest[body_start..body_start + body_len];
        rest = &rest[body_start + body_len + close.len()..];

        match kind {
            TagKind::Action => {
                let code = fenced_code(body)
                    .ok_or_else(|| malformed("<ACTION> block has no fenced code body"))?;
                if code.trim().is_empty() {
                    return Err(malformed("<ACTION> code block is empty"));
                }
                events.push(TagEvent::new(kind, code));
            }
            _ => {
                if let Some(nested) = ALL_TAGS.iter().find(|t| body.contains(**t)) {
                    return Err(malformed(format!("{nested} nested inside {open}")));
                }
                events.push(TagEvent::new(kind, body.trim()));
            }
        }
    }
}

/// Renders events back into tagged text that [`parse_turn`] reads as the
/// same events.
pub fn render_turn(events: &[TagEvent]) -> String {
    events
        .iter()
        .map(|e| match e.kind {
            TagKind::Think => format!("{}{}{}", THINK.0, e.body, THINK.1),
            TagKind::Action => format!("{}\n```python\n{}\n```\n{}", ACTION.0, e.body, ACTION.1),
            TagKind::Answer => format!("{}{}{}", ANSWER.0, e.body, ANSWER.1),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn malformed(msg: impl Into<String>) -> ReactError {
    ReactError::MalformedTurn(msg.into())
}

/// Code between the first pair of triple-backtick fences, without the
/// language hint. Any hint, or none, is accepted.
fn fenced_code(body: &str) -> Option<String> {
    let open = body.find("```")?;
    let after = &body[open + 3..];
    let close = after.find("```")?;
    let inner = &after[..close];
    if let Some(newline) = inner.find('\n') {
        let first = inner[..newline].trim();
        let code = if first.is_empty() || is_hint(first) {
            &inner[newline + 1..]
        } else {
            inner
        };
        return Some(code.trim_end().to_string());
    }
    // Single-line form: ```python print(1)```
    let line = inner.trim();
    match line.split_once(char::is_whitespace) {
        Some((hint, code)) if is_hint(hint) => Some(code.trim().to_string()),
        _ => Some(line.to_string()),
    }
}

fn is_hint(word: &str) -> bool {
    !word.is_empty()
        && word
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '+' | '-' | '.'))
}

/// Caps text at [`OBSERVATION_LIMIT`] characters, marking the cut.
pub fn truncate_observation(text: &str) -> String {
    match text.char_indices().nth(OBSERVATION_LIMIT) {
        Some((cut, _)) => format!("{}{TRUNCATION_MARKER}", &text[..cut]),
        None => text.to_string(),
    }
}

/// What an action's run turns into for the model: stdout on success,
/// stdout followed by the failure text otherwise.
pub fn observation_text(outcome: &ExecutionOutcome) -> String {
    let raw = if outcome.exit_ok && !outcome.write_violation {
        outcome.stdout.clone()
    } else {
        let mut text = outcome.stdout.clone();
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&outcome.error_trace());
        text
    };
    truncate_observation(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactStep {
    pub model_turn: String,
    pub events: Vec<TagEvent>,
    pub observation: Option<String>,
    pub outcome: Option<ExecutionOutcome>,
    /// Turn that failed to parse before the successful reprompt.
    pub rejected_turn: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReActTranscript {
    pub steps: Vec<ReactStep>,
    pub answer: Option<String>,
    pub steps_used: usize,
    /// Set when the loop stopped on a turn that stayed malformed after a reprompt.
    pub aborted: Option<String>,
}

impl ReActTranscript {
    pub fn think_bodies(&self) -> Vec<&str> {
        self.steps
            .iter()
            .flat_map(|s| s.events.iter())
            .filter(|e| e.kind == TagKind::Think)
            .map(|e| e.body.as_str())
            .collect()
    }

    pub fn snippet_runs(&self) -> usize {
        self.steps.iter().filter(|s| s.outcome.is_some()).count()
    }
}

/// Where and how snippets run for one loop.
#[derive(Debug, Clone)]
pub struct SnippetEnv {
    pub sandbox: Sandbox,
    /// Files the snippets may read.
    pub readable_paths: Vec<PathBuf>,
    /// Each step gets `scratch_root/step_<n>`.
    pub scratch_root: PathBuf,
    pub timeout: Duration,
}

const REPROMPT: &str = "Your previous reply did not follow the required tag format. \
Use <THINK>...</THINK> for reasoning, <ACTION>```python ... ```</ACTION> for one \
standalone code block, or <ANSWER>...</ANSWER> for the final result.";

const NO_ACTION: &str = "No action was provided. Issue an <ACTION> or give the final <ANSWER>.";

/// Alternates model turns and snippet runs until an answer or `max_steps`.
///
/// The conversation goes to the backend as a single user message that
/// accumulates every prior turn and its observation block.
pub fn run_react_loop(
    role: AgentRole,
    system_prompt: &str,
    initial_user_message: &str,
    max_steps: usize,
    env: &SnippetEnv,
    gateway: &Gateway,
) -> Result<ReActTranscript, ReactError> {
    assert!(max_steps >= 1, "max_steps must be at least 1");
    let mut transcript = ReActTranscript::default();
    let mut conversation = initial_user_message.to_string();

    while transcript.steps_used < max_steps {
        transcript.steps_used += 1;
        let (first, _) = gateway.complete(role, system_prompt, &conversation)?;
        let (turn, events, rejected) = match parse_turn(&first) {
            Ok(events) => (first, events, None),
            Err(ReactError::MalformedTurn(why)) => {
                let retry_message = format!("{conversation}\n\n{first}\n\n{REPROMPT}");
                let (second, _) = gateway.complete(role, system_prompt, &retry_message)?;
                match parse_turn(&second) {
                    Ok(events) => (second, events, Some(first)),
                    Err(ReactError::MalformedTurn(again)) => {
                        transcript.steps.push(ReactStep {
                            model_turn: second,
                            events: Vec::new(),
                            observation: None,
                            outcome: None,
                            rejected_turn: Some(first),
                        });
                        transcript.aborted = Some(format!("{why}; after reprompt: {again}"));
                        return Ok(transcript);
                    }
                    Err(other) => return Err(other),
                }
            }
            Err(other) => return Err(other),
        };

        if let Some(answer) = events.iter().find(|e| e.kind == TagKind::Answer) {
            transcript.answer = Some(answer.body.clone());
            transcript.steps.push(ReactStep {
                model_turn: turn,
                events,
                observation: None,
                outcome: None,
                rejected_turn: rejected,
            });
            return Ok(transcript);
        }

        let (observation, outcome) = match events.iter().find(|e| e.kind == TagKind::Action) {
            Some(action) => {
                let scratch = env
                    .scratch_root
                    .join(format!("step_{}", transcript.steps_used));
                let outcome = env.sandbox.execute_snippet(&ExecutionRequest {
                    code: action.body.clone(),
                    input_paths: env.readable_paths.clone(),
                    output_dir: scratch.clone(),
                    work_dir: scratch,
                    mode: ExecutionMode::Snippet,
                    timeout: env.timeout,
                })?;
                (observation_text(&outcome), Some(outcome))
            }
            None => (NO_ACTION.to_string(), None),
        };
        conversation = format!("{conversation}\n\n{turn}\n\n{OBSERVATION_HEADER}\n{observation}");
        transcript.steps.push(ReactStep {
            model_turn: turn,
            events,
            observation: Some(observation),
            outcome,
            rejected_turn: rejected,
        });
    }
    Ok(transcript)
}
