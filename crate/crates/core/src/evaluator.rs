//! Scores a round's output with the task's own evaluation script.
//!
//! This is the only module that reads a task's ground-truth or eval-script
//! paths. Everything else receives the scalar score.

use std::ffi::OsString;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::sandbox::{ExecutionOutcome, Sandbox};
use crate::workflow::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    /// In `[0, 1]`.
    pub score: f64,
    pub raw_output: String,
    pub eval_exit_ok: bool,
    /// Whether the eval script ran at all; false when the candidate failed.
    pub invoked: bool,
    /// The eval script crashed or printed no parsable score.
    pub eval_failed: bool,
    /// The printed score lay outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

impl ScoreResult {
    fn skipped() -> Self {
        Self {
            score: 0.0,
            raw_output: String::new(),
            eval_exit_ok: false,
            invoked: false,
            eval_failed: false,
            clamped: false,
        }
    }
}

fn absolute(path: &Path) -> std::path::PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Parses the last non-empty stdout line as a decimal score.
pub fn parse_score(stdout: &str) -> Option<f64> {
    let line = stdout.lines().rev().find(|l| !l.trim().is_empty())?;
    line.trim().parse::<f64>().ok().filter(|v| !v.is_nan())
}

/// Runs `eval.py --pred <outputs…> --gt <ground truth>` for a successful
/// candidate; a failed or empty candidate scores 0 without invoking it.
pub fn evaluate(
    outcome: &ExecutionOutcome,
    task: &TaskSpec,
    sandbox: &Sandbox,
    work_dir: &Path,
    timeout: Duration,
) -> ScoreResult {
    if !outcome.exit_ok || outcome.produced_files.is_empty() {
        return ScoreResult::skipped();
    }
    let mut args: Vec<OsString> = vec!["--pred".into()];
    args.extend(
        outcome
            .produced_files
            .iter()
            .map(|p| absolute(p).into_os_string()),
    );
    args.push("--gt".into());
    args.push(absolute(&task.ground_truth_path).into_os_string());
    let mut reads = outcome.produced_files.clone();
    reads.push(task.ground_truth_path.clone());

    let run = match sandbox.run_evaluation_script(
        &absolute(&task.eval_script_path),
        args,
        work_dir,
        timeout,
        &reads,
    ) {
        Ok(run) => run,
        Err(e) => {
            log::warn!("eval script for `{}` could not run: {e}", task.task_id);
            return ScoreResult {
                raw_output: e.to_string(),
                invoked: true,
                eval_failed: true,
                ..ScoreResult::skipped()
            };
        }
    };
    let raw_output = if run.stderr.is_empty() {
        run.stdout.clone()
    } else {
        format!("{}{}", run.stdout, run.stderr)
    };
    let parsed = if run.exit_ok {
        parse_score(&run.stdout)
    } else {
        None
    };
    let Some(value) = parsed else {
        log::warn!(
            "eval script for `{}` failed or printed no score",
            task.task_id
        );
        return ScoreResult {
            raw_output,
            eval_exit_ok: run.exit_ok,
            invoked: true,
            eval_failed: true,
            ..ScoreResult::skipped()
        };
    };
    let score = value.clamp(0.0, 1.0);
    let clamped = score != value;
    if clamped {
        log::warn!(
            "eval script for `{}` printed {value}, clamped to {score}",
            task.task_id
        );
    }
    ScoreResult {
        score,
        raw_output,
        eval_exit_ok: true,
        invoked: true,
        eval_failed: false,
        clamped,
    }
}
