//! The iterative refinement loop: interpret once, then per round profile,
//! retrieve, generate, execute (with debugging), evaluate, summarize and
//! record feedback, stopping early once a round reaches the threshold.

mod run;
mod types;

use std::path::PathBuf;

use thiserror::Error;

use crate::agents::AgentError;
use crate::gateway::{GatewayError, UsageTotals};
use crate::library::LibraryError;
use crate::sandbox::SandboxError;

pub use run::{run_workflow, AttemptRecord, RoundOutcome, RoundTranscript, RunEnv};
pub use types::{
    build_context, finalize, record_feedback, CandidateProgram, FeedbackRecord, ProfilingContext,
    TaskSpec, WorkflowConfig, WorkflowMemory, WorkflowResult, DEFAULT_TIME_CAP,
};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid workflow config: {0}")]
    InvalidConfig(String),
    #[error("feedback history out of order: entry {position} has round {round}")]
    HistoryOutOfOrder { position: usize, round: u32 },
    #[error("round mismatch: expected round {expected}, got {got}")]
    RoundMismatch { expected: u32, got: u32 },
    #[error("workflow memory is empty")]
    EmptyMemory,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl WorkflowError {
    /// True when a scripted mock ran out of turns.
    pub fn is_gateway_exhausted(&self) -> bool {
        let gateway = match self {
            WorkflowError::Agent(e) => e.gateway(),
            WorkflowError::Library(LibraryError::Gateway(e)) => Some(e),
            _ => None,
        };
        matches!(gateway, Some(GatewayError::Exhausted { .. }))
    }
}

/// A run that stopped on an error, with the accounting gathered before it.
#[derive(Debug)]
pub struct WorkflowFailure {
    pub error: WorkflowError,
    pub rounds_run: u32,
    pub script_attempts: u32,
    pub runnable_attempts: u32,
    pub usage: UsageTotals,
    pub wall_time: f64,
}

impl std::fmt::Display for WorkflowFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "workflow failed after {} round(s): {}",
            self.rounds_run, self.error
        )
    }
}

impl std::error::Error for WorkflowFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(round: u32) -> FeedbackRecord {
        FeedbackRecord {
            round,
            score: 0.0,
            error_trace: None,
            insight: format!("insight {round}"),
            profile_used: String::new(),
        }
    }

    fn memory_of(scores: &[f64]) -> WorkflowMemory {
        let mut memory = WorkflowMemory::new();
        for (i, &score) in scores.iter().enumerate() {
            memory
                .push(CandidateProgram {
                    round: i as u32 + 1,
                    code: format!("code {}", i + 1),
                    runnable: score > 0.0,
                    score,
                    output_paths: vec![],
                    script_attempts: 1,
                    runnable_attempts: u32::from(score > 0.0),
                    usage: UsageTotals::default(),
                })
                .unwrap();
        }
        memory
    }

    #[test]
    fn build_context_cold_start_and_identity() {
        let ctx = build_context("", &[], &[]).unwrap();
        assert_eq!(ctx, ProfilingContext::default());
        let history = vec![record(1)];
        let ctx = build_context("p", &[], &history).unwrap();
        assert_eq!(ctx.profile, "p");
        assert_eq!(ctx.feedback_history, history);
    }

    #[test]
    fn build_context_rejects_out_of_order_history() {
        let history = vec![record(2), record(1)];
        assert!(matches!(
            build_context("p", &[], &history),
            Err(WorkflowError::HistoryOutOfOrder {
                position: 0,
                round: 2
            })
        ));
    }

    #[test]
    fn record_feedback_appends_next_round_only() {
        let one = record_feedback(&[], record(1)).unwrap();
        assert_eq!(one.len(), 1);
        let two = record_feedback(&one, record(2)).unwrap();
        let three = record_feedback(&two, record(3)).unwrap();
        assert_eq!(three.len(), 3);
        assert_eq!(&three[..2], &two[..]);
        assert!(matches!(
            record_feedback(&two, record(2)),
            Err(WorkflowError::RoundMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn finalize_examples() {
        let memory = memory_of(&[0.9]);
        let (c, conv) = finalize(&memory, 0.8).unwrap();
        assert_eq!((c.round, conv), (1, true));
        let memory = memory_of(&[0.3, 0.6, 0.5]);
        let (c, conv) = finalize(&memory, 0.8).unwrap();
        assert_eq!((c.round, conv), (2, false));
        let memory = memory_of(&[0.5, 0.5]);
        let (c, conv) = finalize(&memory, 0.8).unwrap();
        assert_eq!((c.round, conv), (1, false));
        assert!(matches!(
            finalize(&WorkflowMemory::new(), 0.8),
            Err(WorkflowError::EmptyMemory)
        ));
    }

    #[test]
    fn memory_is_append_only_in_round_order() {
        let mut memory = memory_of(&[0.1]);
        let mut skipped = memory.candidates()[0].clone();
        skipped.round = 3;
        assert!(memory.push(skipped).is_err());
    }

    #[test]
    fn default_config_matches_published_settings() {
        let c = WorkflowConfig::default();
        assert_eq!(c.max_rounds, 3);
        assert_eq!(c.success_threshold, 0.8);
        assert_eq!(c.top_k, 2);
        assert_eq!(c.sim_threshold, 0.5);
        assert_eq!(c.max_profiler_steps, 7);
        assert_eq!(c.max_debug_attempts, 5);
        assert_eq!(DEFAULT_TIME_CAP.as_secs(), 1800);
        assert!(c.validate().is_ok());
    }

    proptest! {
        #[test]
        fn finalize_matches_linear_scan(scores in prop::collection::vec(0.0f64..=1.0, 1..6), threshold in 0.0f64..=1.0) {
            let memory = memory_of(&scores);
            let (picked, converged) = finalize(&memory, threshold).unwrap();
            let first_hit = scores.iter().position(|&s| s >= threshold);
            match first_hit {
                Some(i) => prop_assert_eq!((picked.round, converged), (i as u32 + 1, true)),
                None => {
                    let mut best = 0;
                    for i in 1..scores.len() {
                        if scores[i] > scores[best] {
                            best = i;
                        }
                    }
                    prop_assert_eq!((picked.round, converged), (best as u32 + 1, false));
                }
            }
        }
    }
}
