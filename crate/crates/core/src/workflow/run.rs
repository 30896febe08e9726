use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::types::{
    build_context, finalize, record_feedback, CandidateProgram, FeedbackRecord, ProfilingContext,
    TaskSpec, WorkflowConfig, WorkflowMemory, WorkflowResult,
};
use super::{WorkflowError, WorkflowFailure};
use crate::agents::{
    self, AgentError, Exploration, ExplorationSettings, IntentRecord, SubtaskPlan, SummaryInput,
    TaskMeta, TaskType,
};
use crate::clock::Clock;
use crate::embedding::Scalar;
use crate::evaluator::{self, ScoreResult};
use crate::gateway::{ChatExchange, Gateway, UsageTotals};
use crate::library::{retrieve_multi, retrieve_single, OperatorIndex, RetrievedOperator};
use crate::sandbox::{ExecutionMode, ExecutionOutcome, ExecutionRequest, Sandbox};

/// Where a run writes and what it runs on.
#[derive(Clone)]
pub struct RunEnv {
    pub sandbox: Sandbox,
    /// Each task writes under `runs_root/<task_id>/`.
    pub runs_root: PathBuf,
    /// Source of reported durations.
    pub clock: Arc<dyn Clock>,
    /// Echoed into `result.json` as `settings`.
    pub settings: Option<serde_json::Value>,
}

/// One script handed to the executor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub code: String,
    /// Debugger's explanation for a fixed script; `None` for the generation.
    pub debug_reason: Option<String>,
    pub outcome: ExecutionOutcome,
}

/// Contents of `round_<t>/outcome.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub attempts: Vec<AttemptRecord>,
    pub script_attempts: u32,
    pub runnable_attempts: u32,
    pub runnable: bool,
    pub abandoned: bool,
}

/// Contents of `round_<t>/transcript.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u32,
    pub profile: Option<Exploration>,
    pub plan: Option<SubtaskPlan>,
    pub retrieved: Vec<RetrievedOperator>,
    pub context: Option<ProfilingContext>,
    pub score: Option<ScoreResult>,
    pub summary: Option<Exploration>,
    pub summary_skipped: bool,
    pub abandoned: bool,
    pub exchanges: Vec<ChatExchange>,
}

impl RoundTranscript {
    fn new(round: u32) -> Self {
        Self {
            round,
            profile: None,
            plan: None,
            retrieved: Vec::new(),
            context: None,
            score: None,
            summary: None,
            summary_skipped: false,
            abandoned: false,
            exchanges: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SetupTranscript<'a> {
    meta: &'a TaskMeta,
    intent: Option<&'a IntentRecord>,
    exchanges: Vec<ChatExchange>,
}

#[derive(Debug, Serialize)]
struct FailureRecord {
    error: String,
    gateway_exhausted: bool,
    rounds_run: u32,
    script_attempts: u32,
    runnable_attempts: u32,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| WorkflowError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fresh_dir(path: &Path) -> Result<(), WorkflowError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|source| WorkflowError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    fs::create_dir_all(path).map_err(|source| WorkflowError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Run<'a, F> {
    task: &'a TaskSpec,
    config: &'a WorkflowConfig,
    gateway: &'a Gateway,
    library: &'a OperatorIndex<F>,
    env: &'a RunEnv,
    run_dir: PathBuf,
    deadline: Instant,
    ledger_start: usize,
    meta: TaskMeta,
    memory: WorkflowMemory,
    feedback: Vec<FeedbackRecord>,
    refs: Vec<PathBuf>,
    rounds_run: u32,
    script_attempts: u32,
    runnable_attempts: u32,
    time_cap_exceeded: bool,
}

enum RoundEnd {
    Continue,
    Converged(Vec<PathBuf>),
    Abandoned,
}

/// Runs the refinement loop for one task.
///
/// `gateway` should be a fresh [`Gateway::fork`] per run; usage is taken
/// from the exchanges it records during this call. Artifacts go to
/// `env.runs_root/<task_id>/`, which is recreated.
pub fn run_workflow<F: Scalar>(
    task: &TaskSpec,
    config: &WorkflowConfig,
    gateway: &Gateway,
    library: &OperatorIndex<F>,
    env: &RunEnv,
) -> Result<WorkflowResult, WorkflowFailure> {
    let started = env.clock.now();
    let mut run = Run {
        task,
        config,
        gateway,
        library,
        env,
        run_dir: std::path::absolute(&env.runs_root)
            .unwrap_or_else(|_| env.runs_root.clone())
            .join(&task.task_id),
        deadline: Instant::now() + task.time_cap,
        ledger_start: gateway.ledger().exchanges().len(),
        meta: TaskMeta::default(),
        memory: WorkflowMemory::new(),
        feedback: Vec::new(),
        refs: Vec::new(),
        rounds_run: 0,
        script_attempts: 0,
        runnable_attempts: 0,
        time_cap_exceeded: false,
    };
    let outcome = run.execute();
    gateway.set_round(0);
    let wall_time = env.clock.since(started).as_secs_f64();
    match outcome {
        Ok(mut result) => {
            result.wall_time = wall_time;
            result.usage = run.usage();
            let path = run.run_dir.join("result.json");
            write_json(&path, &result).map_err(|error| run.failure(error, wall_time))?;
            Ok(result)
        }
        Err(error) => {
            let record = FailureRecord {
                error: error.to_string(),
                gateway_exhausted: error.is_gateway_exhausted(),
                rounds_run: run.rounds_run,
                script_attempts: run.script_attempts,
                runnable_attempts: run.runnable_attempts,
            };
            if run.run_dir.is_dir() {
                let _ = write_json(&run.run_dir.join("failure.json"), &record);
            }
            Err(run.failure(error, wall_time))
        }
    }
}

impl<F: Scalar> Run<'_, F> {
    fn failure(&self, error: WorkflowError, wall_time: f64) -> WorkflowFailure {
        WorkflowFailure {
            error,
            rounds_run: self.rounds_run,
            script_attempts: self.script_attempts,
            runnable_attempts: self.runnable_attempts,
            usage: self.usage(),
            wall_time,
        }
    }

    fn exchanges_since_start(&self) -> Vec<ChatExchange> {
        self.gateway.ledger().exchanges()[self.ledger_start..].to_vec()
    }

    fn usage(&self) -> UsageTotals {
        self.exchanges_since_start()
            .iter()
            .fold(UsageTotals::default(), |mut t, e| {
                t.prompt_tokens += e.prompt_tokens;
                t.completion_tokens += e.completion_tokens;
                t.wall_time += e.latency;
                t
            })
    }

    fn remaining(&self) -> Duration {
        self.deadline.saturating_duration_since(Instant::now())
    }

    fn out_of_time(&mut self) -> bool {
        if self.remaining().is_zero() {
            self.time_cap_exceeded = true;
        }
        self.time_cap_exceeded
    }

    fn execute(&mut self) -> Result<WorkflowResult, WorkflowError> {
        self.config.validate()?;
        self.task.validate()?;
        fresh_dir(&self.run_dir)?;

        self.gateway.set_round(0);
        self.meta = TaskMeta::from_paths(&self.task.input_paths);
        let intent = agents::interpret(&self.task.instruction, &self.meta, self.gateway);
        let setup = SetupTranscript {
            meta: &self.meta,
            intent: intent.as_ref().ok(),
            exchanges: self.exchanges_since_start(),
        };
        write_json(&self.run_dir.join("transcript.json"), &setup)?;
        self.refs.push(PathBuf::from("transcript.json"));
        let intent = intent?;

        for round in 1..=self.config.max_rounds {
            if self.out_of_time() {
                break;
            }
            self.rounds_run = round;
            match self.round(round, &intent)? {
                RoundEnd::Continue => {}
                RoundEnd::Converged(outputs) => {
                    let (best, _) = finalize(&self.memory, self.config.success_threshold)?;
                    return Ok(self.result(outputs, best.round, best.score, true));
                }
                RoundEnd::Abandoned => break,
            }
        }

        if self.memory.is_empty() {
            return Ok(self.result(Vec::new(), 0, 0.0, false));
        }
        let (best, _) = finalize(&self.memory, self.config.success_threshold)?;
        let (round, score, code, recorded) = (
            best.round,
            best.score,
            best.code.clone(),
            best.output_paths.clone(),
        );
        let outputs = if self.time_cap_exceeded {
            recorded
        } else {
            self.reexecute(&code)?
        };
        Ok(self.result(outputs, round, score, false))
    }

    fn result(
        &self,
        outputs: Vec<PathBuf>,
        best_round: u32,
        best_score: f64,
        converged: bool,
    ) -> WorkflowResult {
        WorkflowResult {
            task_id: self.task.task_id.clone(),
            final_output_paths: outputs,
            best_round,
            best_score,
            converged,
            transcript_refs: self.refs.clone(),
            rounds_run: self.rounds_run,
            time_cap_exceeded: self.time_cap_exceeded,
            script_attempts: self.script_attempts,
            runnable_attempts: self.runnable_attempts,
            usage: UsageTotals::default(),
            wall_time: 0.0,
            config: self.config.clone(),
            settings: self.env.settings.clone(),
        }
    }

    fn exploration(&self, scratch: PathBuf, max_steps: usize) -> ExplorationSettings {
        ExplorationSettings {
            sandbox: self.env.sandbox.clone(),
            scratch_root: scratch,
            max_steps,
            snippet_timeout: self
                .config
                .snippet_timeout
                .min(self.remaining())
                .max(Duration::from_millis(1)),
        }
    }

    fn round(&mut self, round: u32, intent: &IntentRecord) -> Result<RoundEnd, WorkflowError> {
        self.gateway.set_round(round);
        let round_dir = self.run_dir.join(format!("round_{round}"));
        let outputs_dir = round_dir.join("outputs");
        fresh_dir(&outputs_dir)?;
        let ledger_mark = self.gateway.ledger().exchanges().len();
        let mut transcript = RoundTranscript::new(round);

        let result = self.round_body(round, intent, &round_dir, &outputs_dir, &mut transcript);
        transcript.exchanges = self.gateway.ledger().exchanges()[ledger_mark..].to_vec();
        write_json(&round_dir.join("transcript.json"), &transcript)?;
        self.refs
            .push(PathBuf::from(format!("round_{round}/transcript.json")));
        result
    }

    fn round_body(
        &mut self,
        round: u32,
        intent: &IntentRecord,
        round_dir: &Path,
        outputs_dir: &Path,
        transcript: &mut RoundTranscript,
    ) -> Result<RoundEnd, WorkflowError> {
        let round_start = self.gateway.ledger().exchanges().len();
        let prior_insight = self.feedback.last().map(|f| f.insight.clone());
        let profiling = agents::profile(
            &self.task.input_paths,
            &intent.operation,
            prior_insight.as_deref(),
            &self.exploration(
                round_dir.join("react/profiler"),
                self.config.max_profiler_steps,
            ),
            self.gateway,
        )?;
        let profile_text = profiling.text.clone();
        transcript.profile = Some(profiling);
        if self.out_of_time() {
            transcript.abandoned = true;
            return Ok(RoundEnd::Abandoned);
        }

        let retrieved = if intent.is_multi_step {
            let allowed: Vec<TaskType> = TaskType::all().collect();
            let plan = agents::decompose(&self.task.instruction, &allowed, self.gateway)?;
            let hits = retrieve_multi(
                &plan.descriptions(),
                self.library,
                self.config.top_k,
                self.config.sim_threshold,
                self.gateway,
            )?;
            transcript.plan = Some(plan);
            hits
        } else {
            retrieve_single(
                &self.task.instruction,
                self.library,
                self.config.top_k,
                self.config.sim_threshold,
                self.gateway,
            )?
        };
        transcript.retrieved = retrieved.clone();

        let context = build_context(&profile_text, &retrieved, &self.feedback)?;
        transcript.context = Some(context.clone());
        let code = agents::generate(
            &self.task.instruction,
            intent,
            &self.meta,
            &context,
            &self.memory,
            self.gateway,
        )?;
        if self.out_of_time() {
            transcript.abandoned = true;
            return Ok(RoundEnd::Abandoned);
        }

        let executed = self.execute_with_debugging(round, code, intent, round_dir, outputs_dir)?;
        let last = executed.attempts.last().expect("at least one attempt");
        let final_code = last.code.clone();
        let final_outcome = last.outcome.clone();
        fs::write(round_dir.join("code.txt"), &final_code).map_err(|source| WorkflowError::Io {
            path: round_dir.join("code.txt"),
            source,
        })?;
        write_json(&round_dir.join("outcome.json"), &executed)?;
        self.refs
            .push(PathBuf::from(format!("round_{round}/outcome.json")));

        let score = if executed.abandoned {
            ScoreResult {
                score: 0.0,
                raw_output: String::new(),
                eval_exit_ok: false,
                invoked: false,
                eval_failed: false,
                clamped: false,
            }
        } else {
            evaluator::evaluate(
                &final_outcome,
                self.task,
                &self.env.sandbox,
                &round_dir.join("eval"),
                self.config.script_timeout,
            )
        };
        let s = score.score;
        transcript.score = Some(score);
        let output_paths = if executed.runnable {
            final_outcome.produced_files.clone()
        } else {
            Vec::new()
        };

        let usage = self.gateway.ledger().exchanges()[round_start..]
            .iter()
            .fold(UsageTotals::default(), |mut t, e| {
                t.prompt_tokens += e.prompt_tokens;
                t.completion_tokens += e.completion_tokens;
                t.wall_time += e.latency;
                t
            });
        self.memory.push(CandidateProgram {
            round,
            code: final_code,
            runnable: executed.runnable,
            score: s,
            output_paths: output_paths.clone(),
            script_attempts: executed.script_attempts,
            runnable_attempts: executed.runnable_attempts,
            usage,
        })?;

        if executed.abandoned {
            transcript.abandoned = true;
            return Ok(RoundEnd::Abandoned);
        }

        let converged = s >= self.config.success_threshold;
        let error_trace = (!executed.runnable).then(|| final_outcome.error_trace());
        let insight = if converged && !self.config.summarize_on_success {
            transcript.summary_skipped = true;
            String::new()
        } else {
            let summary = agents::summarize(
                SummaryInput {
                    instruction: &self.task.instruction,
                    meta: &self.meta,
                    raw_paths: &self.task.input_paths,
                    output_paths: &output_paths,
                    score: s,
                    error_trace: error_trace.as_deref(),
                    history: &self.feedback,
                },
                &self.exploration(
                    round_dir.join("react/summarizer"),
                    self.config.max_summarizer_steps,
                ),
                self.gateway,
            )?;
            let text = summary.text.clone();
            transcript.summary = Some(summary);
            text
        };
        self.feedback = record_feedback(
            &self.feedback,
            FeedbackRecord {
                round,
                score: s,
                error_trace,
                insight,
                profile_used: profile_text,
            },
        )?;

        if converged {
            Ok(RoundEnd::Converged(output_paths))
        } else {
            Ok(RoundEnd::Continue)
        }
    }

    /// Runs the generated script, then up to `max_debug_attempts` debugger
    /// fixes while it keeps failing.
    fn execute_with_debugging(
        &mut self,
        round: u32,
        code: String,
        intent: &IntentRecord,
        round_dir: &Path,
        outputs_dir: &Path,
    ) -> Result<RoundOutcome, WorkflowError> {
        let mut attempts: Vec<AttemptRecord> = Vec::new();
        let mut current = code;
        let mut reason = None;
        let mut fixes = 0;
        let mut abandoned = false;
        loop {
            let attempt = attempts.len() as u32 + 1;
            fresh_dir(outputs_dir)?;
            let outcome = self.env.sandbox.execute_full(&ExecutionRequest {
                code: current.clone(),
                input_paths: self.task.input_paths.clone(),
                output_dir: outputs_dir.to_path_buf(),
                work_dir: round_dir.join(format!("work/attempt_{attempt}")),
                mode: ExecutionMode::FullScript,
                timeout: self
                    .config
                    .script_timeout
                    .min(self.remaining())
                    .max(Duration::from_millis(1)),
            })?;
            self.script_attempts += 1;
            let ok = outcome.exit_ok;
            if ok {
                self.runnable_attempts += 1;
            }
            let trace = outcome.error_trace();
            attempts.push(AttemptRecord {
                attempt,
                code: current.clone(),
                debug_reason: reason.take(),
                outcome,
            });
            if ok {
                break;
            }
            if self.out_of_time() {
                abandoned = true;
                break;
            }
            if fixes >= self.config.max_debug_attempts {
                break;
            }
            match agents::debug(
                &current,
                &trace,
                &self.task.instruction,
                intent,
                &self.meta,
                self.gateway,
            ) {
                Ok(fix) => {
                    fixes += 1;
                    current = fix.code;
                    reason = Some(fix.reason);
                }
                Err(AgentError::UnparseableFix(why)) => {
                    log::warn!("round {round}: debugger reply unusable: {why}");
                    break;
                }
                Err(other) => return Err(other.into()),
            }
        }
        let runnable_attempts = attempts.iter().filter(|a| a.outcome.exit_ok).count() as u32;
        Ok(RoundOutcome {
            round,
            script_attempts: attempts.len() as u32,
            runnable_attempts,
            runnable: attempts.last().is_some_and(|a| a.outcome.exit_ok),
            abandoned,
            attempts,
        })
    }

    /// Runs the best candidate once more into `final/outputs`.
    fn reexecute(&mut self, code: &str) -> Result<Vec<PathBuf>, WorkflowError> {
        let final_dir = self.run_dir.join("final");
        let outputs_dir = final_dir.join("outputs");
        fresh_dir(&outputs_dir)?;
        let outcome = self.env.sandbox.execute_full(&ExecutionRequest {
            code: code.to_string(),
            input_paths: self.task.input_paths.clone(),
            output_dir: outputs_dir,
            work_dir: final_dir.join("work"),
            mode: ExecutionMode::FullScript,
            timeout: self
                .config
                .script_timeout
                .min(self.remaining())
                .max(Duration::from_millis(1)),
        })?;
        write_json(&final_dir.join("outcome.json"), &outcome)?;
        self.refs.push(PathBuf::from("final/outcome.json"));
        Ok(if outcome.exit_ok {
            outcome.produced_files
        } else {
            Vec::new()
        })
    }
}
