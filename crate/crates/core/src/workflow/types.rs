use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::gateway::UsageTotals;
use crate::library::RetrievedOperator;

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_TIME_CAP: Duration = Duration::from_secs(30 * 60);

/// A table-processing request. The ground-truth and eval-script paths are
/// for the evaluator only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub input_paths: Vec<PathBuf>,
    /// `csv` or `jsonl`.
    pub expected_suffix: String,
    pub eval_script_path: PathBuf,
    pub ground_truth_path: PathBuf,
    #[serde(with = "duration_secs")]
    pub time_cap: Duration,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if self.input_paths.is_empty() {
            return Err(WorkflowError::InvalidTask(format!(
                "task `{}` has no input files",
                self.task_id
            )));
        }
        if let Some(missing) = self.input_paths.iter().find(|p| !p.is_file()) {
            return Err(WorkflowError::InvalidTask(format!(
                "input file {} does not exist",
                missing.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub max_rounds: u32,
    pub success_threshold: f64,
    pub top_k: usize,
    pub sim_threshold: f64,
    pub max_profiler_steps: usize,
    pub max_summarizer_steps: usize,
    pub max_debug_attempts: u32,
    #[serde(with = "duration_secs")]
    pub script_timeout: Duration,
    #[serde(with = "duration_secs")]
    pub snippet_timeout: Duration,
    /// Run the summarizer on the round that reaches the threshold; its
    /// insight is never consumed there.
    pub summarize_on_success: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            success_threshold: 0.8,
            top_k: 2,
            sim_threshold: 0.5,
            max_profiler_steps: 7,
            max_summarizer_steps: 7,
            max_debug_attempts: 5,
            script_timeout: Duration::from_secs(300),
            snippet_timeout: Duration::from_secs(60),
            summarize_on_success: false,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let bad = |msg: &str| Err(WorkflowError::InvalidConfig(msg.to_string()));
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive");
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return bad("success_threshold must lie in [0, 1]");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return bad("sim_threshold must lie in [0, 1]");
        }
        if self.max_profiler_steps == 0 || self.max_summarizer_steps == 0 {
            return bad("ReAct step limits must be positive");
        }
        if self.max_debug_attempts == 0 {
            return bad("max_debug_attempts must be positive");
        }
        if self.script_timeout.is_zero() || self.snippet_timeout.is_zero() {
            return bad("timeouts must be positive");
        }
        Ok(())
    }
}

/// One round's feedback: score, execution error, summarizer insight, and the
/// profile the round used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub round: u32,
    pub score: f64,
    pub error_trace: Option<String>,
    pub insight: String,
    pub profile_used: String,
}

/// Everything a generation round is conditioned on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfilingContext {
    pub profile: String,
    pub retrieved: Vec<RetrievedOperator>,
    pub feedback_history: Vec<FeedbackRecord>,
}

/// Packages a context. History rounds must run 1, 2, … in order.
pub fn build_context(
    profile: &str,
    retrieved: &[RetrievedOperator],
    history: &[FeedbackRecord],
) -> Result<ProfilingContext, WorkflowError> {
    for (expected, record) in (1u32..).zip(history) {
        if record.round != expected {
            return Err(WorkflowError::HistoryOutOfOrder {
                position: expected as usize - 1,
                round: record.round,
            });
        }
    }
    Ok(ProfilingContext {
        profile: profile.to_string(),
        retrieved: retrieved.to_vec(),
        feedback_history: history.to_vec(),
    })
}

/// Appends `record`, which must be the next round.
pub fn record_feedback(
    history: &[FeedbackRecord],
    record: FeedbackRecord,
) -> Result<Vec<FeedbackRecord>, WorkflowError> {
    let expected = history.len() as u32 + 1;
    if record.round != expected {
        return Err(WorkflowError::RoundMismatch {
            expected,
            got: record.round,
        });
    }
    let mut next = history.to_vec();
    next.push(record);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub round: u32,
    pub code: String,
    pub runnable: bool,
    pub score: f64,
    pub output_paths: Vec<PathBuf>,
    /// Scripts handed to the executor this round: the generation plus each
    /// debugger fix.
    pub script_attempts: u32,
    pub runnable_attempts: u32,
    /// Gateway usage during this round.
    pub usage: UsageTotals,
}

/// Append-only per-round candidates; entry `r - 1` is round `r`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowMemory {
    candidates: Vec<CandidateProgram>,
}

impl WorkflowMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, candidate: CandidateProgram) -> Result<(), WorkflowError> {
        let expected = self.candidates.len() as u32 + 1;
        if candidate.round != expected {
            return Err(WorkflowError::RoundMismatch {
                expected,
                got: candidate.round,
            });
        }
        self.candidates.push(candidate);
        Ok(())
    }

    pub fn candidates(&self) -> &[CandidateProgram] {
        &self.candidates
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

/// Earliest candidate reaching `threshold` (converged), otherwise the
/// highest-scoring candidate with ties going to the earliest round.
pub fn finalize(
    memory: &WorkflowMemory,
    threshold: f64,
) -> Result<(&CandidateProgram, bool), WorkflowError> {
    let candidates = memory.candidates();
    if let Some(hit) = candidates.iter().find(|c| c.score >= threshold) {
        return Ok((hit, true));
    }
    let best = candidates
        .iter()
        .reduce(|best, c| if c.score > best.score { c } else { best })
        .ok_or(WorkflowError::EmptyMemory)?;
    Ok((best, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub task_id: String,
    pub final_output_paths: Vec<PathBuf>,
    /// 0 when no round completed.
    pub best_round: u32,
    pub best_score: f64,
    pub converged: bool,
    /// Round transcripts and outcomes, relative to the run directory.
    pub transcript_refs: Vec<PathBuf>,
    pub rounds_run: u32,
    pub time_cap_exceeded: bool,
    pub script_attempts: u32,
    pub runnable_attempts: u32,
    pub usage: UsageTotals,
    /// Seconds from workflow entry to result.
    pub wall_time: f64,
    pub config: WorkflowConfig,
    /// Backend and runtime settings supplied by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<serde_json::Value>,
}

impl WorkflowResult {
    pub fn read(path: &std::path::Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
