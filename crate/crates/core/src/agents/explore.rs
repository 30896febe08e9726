//! The two exploring agents: the profiler inspects raw inputs before code
//! generation, the summarizer inspects produced outputs after it.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentError, TaskMeta};
use crate::gateway::{AgentRole, Gateway};
use crate::prompts;
use crate::react::{run_react_loop, ReActTranscript, SnippetEnv};
use crate::sandbox::Sandbox;
use crate::workflow::FeedbackRecord;

/// Prefix marking a profile or insight rebuilt from reasoning because the
/// loop ended without an answer.
pub const DEGRADED_PREFIX: &str = "[degraded: exploration ended without an answer]";

#[derive(Debug, Clone)]
pub struct ExplorationSettings {
    pub sandbox: Sandbox,
    pub scratch_root: PathBuf,
    pub max_steps: usize,
    pub snippet_timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    /// The answer body, or the degraded fallback.
    pub text: String,
    pub degraded: bool,
    pub transcript: ReActTranscript,
}

impl Exploration {
    fn from_transcript(transcript: ReActTranscript) -> Self {
        match transcript.answer.clone() {
            Some(text) => Self {
                text,
                degraded: false,
                transcript,
            },
            None => {
                let thoughts = transcript.think_bodies().join("\n");
                let text = if thoughts.is_empty() {
                    DEGRADED_PREFIX.to_string()
                } else {
                    format!("{DEGRADED_PREFIX}\n{thoughts}")
                };
                Self {
                    text,
                    degraded: true,
                    transcript,
                }
            }
        }
    }
}

fn path_list(paths: &[PathBuf]) -> String {
    let rendered: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    serde_json::to_string(&rendered).expect("paths serialize")
}

/// Explores the raw inputs and returns a profiling report.
pub fn profile(
    input_paths: &[PathBuf],
    operation: &str,
    prior_insight: Option<&str>,
    settings: &ExplorationSettings,
    gateway: &Gateway,
) -> Result<Exploration, AgentError> {
    let steps = settings.max_steps.to_string();
    let system = prompts::fill(
        prompts::PROFILER,
        &[
            ("MAX_REACT_STEPS", &steps),
            ("raw_table_paths", &path_list(input_paths)),
            ("operation", operation),
        ],
    );
    let mut user = String::from("Begin profiling the input files for the target.");
    if let Some(insight) = prior_insight {
        user.push_str("\n\nInsight from the previous round:\n");
        user.push_str(insight);
    }
    let env = SnippetEnv {
        sandbox: settings.sandbox.clone(),
        readable_paths: input_paths.to_vec(),
        scratch_root: settings.scratch_root.clone(),
        timeout: settings.snippet_timeout,
    };
    let transcript = run_react_loop(
        AgentRole::Profiler,
        &system,
        &user,
        settings.max_steps,
        &env,
        gateway,
    )?;
    Ok(Exploration::from_transcript(transcript))
}

#[derive(Debug, Clone, Copy)]
pub struct SummaryInput<'a> {
    pub instruction: &'a str,
    pub meta: &'a TaskMeta,
    pub raw_paths: &'a [PathBuf],
    pub output_paths: &'a [PathBuf],
    pub score: f64,
    pub error_trace: Option<&'a str>,
    pub history: &'a [FeedbackRecord],
}

/// Inspects the round's outputs against the objective and returns an insight.
pub fn summarize(
    input: SummaryInput<'_>,
    settings: &ExplorationSettings,
    gateway: &Gateway,
) -> Result<Exploration, AgentError> {
    let steps = settings.max_steps.to_string();
    let system = prompts::fill(
        prompts::SUMMARIZER,
        &[
            ("MAX_REACT_STEPS", &steps),
            ("task_meta", &input.meta.to_prompt()),
            ("processed_file_paths", &path_list(input.output_paths)),
            ("raw_file_paths", &path_list(input.raw_paths)),
            ("task_objective", input.instruction),
        ],
    );
    let mut user = format!("Execution score: {}\n", input.score);
    match input.error_trace {
        Some(trace) => user.push_str(&format!("Execution error:\n{trace}\n")),
        None => user.push_str("Execution error: none\n"),
    }
    if input.output_paths.is_empty() {
        user.push_str("No processed files were produced.\n");
    }
    if !input.history.is_empty() {
        user.push_str("Previous rounds:\n");
        for record in input.history {
            user.push_str(&format!(
                "Round {} (score {}): {}\n",
                record.round, record.score, record.insight
            ));
        }
    }
    user.push_str("Begin the assessment.");

    let mut readable = input.raw_paths.to_vec();
    readable.extend(input.output_paths.iter().cloned());
    let env = SnippetEnv {
        sandbox: settings.sandbox.clone(),
        readable_paths: readable,
        scratch_root: settings.scratch_root.clone(),
        timeout: settings.snippet_timeout,
    };
    let transcript = run_react_loop(
        AgentRole::Summarizer,
        &system,
        &user,
        settings.max_steps,
        &env,
        gateway,
    )?;
    Ok(Exploration::from_transcript(transcript))
}
