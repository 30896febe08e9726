//! Runs generated scripts and exploration snippets in a working directory via
//! an external interpreter command.
//!
//! Isolation is directory-level only. The audit trail is built from the path
//! arguments handed to the process, path literals found in the code, and a
//! before/after snapshot of the watched directories. There is no syscall
//! tracing, so a script that assembles a path at runtime is not caught.

mod audit;
mod process;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};

use audit::Snapshot;
pub use audit::{literal_paths, AccessKind, AuditRecord, Origin};
use process::{run_process, ProcessSpec};

/// Appended to stderr when a run is killed at its timeout.
pub const TIMEOUT_MARKER: &str = "[sandbox] timeout";
/// Prefix of the stderr line reporting a blocked snippet write.
pub const WRITE_BLOCKED_MARKER: &str = "[sandbox] write blocked";

pub const DEFAULT_SCRIPT_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("cannot spawn interpreter `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("output directory {0} must exist and be empty")]
    OutputDirNotEmpty(PathBuf),
    #[error("request mode does not match the executor entry point")]
    WrongMode,
    #[error("sandbox io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("empty interpreter command")]
    NoRuntime,
}

/// Scripts run with their work directory as cwd, so paths handed to them
/// must not be relative.
fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SandboxError + '_ {
    move |source| SandboxError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionMode {
    FullScript,
    Snippet,
}

#[derive(Debug, Clone)]
pub struct ExecutionRequest {
    pub code: String,
    pub input_paths: Vec<PathBuf>,
    /// FullScript: where the script writes results. Snippet: the scratch
    /// directory the snippet runs in, write-protected for the duration.
    pub output_dir: PathBuf,
    /// Process working directory; the script file is materialized here.
    pub work_dir: PathBuf,
    pub mode: ExecutionMode,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub exit_ok: bool,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Seconds, as reported by the sandbox clock.
    pub duration: f64,
    pub produced_files: Vec<PathBuf>,
    pub audit: Vec<AuditRecord>,
    pub timed_out: bool,
    /// A snippet tried to write under a protected directory.
    pub write_violation: bool,
}

impl ExecutionOutcome {
    /// Stderr, or a short status line when stderr is empty.
    pub fn error_trace(&self) -> String {
        if self.stderr.trim().is_empty() {
            format!("process exited with status {:?}", self.exit_code)
        } else {
            self.stderr.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandboxConfig {
    /// Interpreter command and leading arguments, e.g. `["python3"]`.
    pub runtime_cmd: Vec<String>,
    pub kill_grace: Duration,
    pub script_file_name: String,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            runtime_cmd: vec!["python3".to_string()],
            kill_grace: DEFAULT_KILL_GRACE,
            script_file_name: "script.py".to_string(),
        }
    }
}

impl SandboxConfig {
    /// Splits a command string such as `"python3 -I"` on whitespace.
    pub fn with_runtime(runtime: &str) -> Self {
        Self {
            runtime_cmd: runtime.split_whitespace().map(str::to_string).collect(),
            ..Self::default()
        }
    }
}

/// Executor handle. Clones share the suite-wide audit log.
#[derive(Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    audit_log: Arc<Mutex<Vec<AuditRecord>>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox")
            .field("config", &self.config)
            .finish()
    }
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(SandboxConfig::default())
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self {
            config,
            audit_log: Arc::new(Mutex::new(Vec::new())),
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Every audit record produced through this handle and its clones.
    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit_log.lock().expect("audit lock poisoned").clone()
    }

    /// Runs a generated script under the `--input … --output_path_dir …`
    /// argument contract.
    pub fn execute_full(
        &self,
        request: &ExecutionRequest,
    ) -> Result<ExecutionOutcome, SandboxError> {
        if request.mode != ExecutionMode::FullScript {
            return Err(SandboxError::WrongMode);
        }
        let empty = fs::read_dir(&request.output_dir)
            .map(|mut entries| entries.next().is_none())
            .unwrap_or(false);
        if !empty {
            return Err(SandboxError::OutputDirNotEmpty(request.output_dir.clone()));
        }
        let script = self.materialize(&request.work_dir, &request.code)?;
        let mut args: Vec<OsString> = vec!["--input".into()];
        args.extend(
            request
                .input_paths
                .iter()
                .map(|p| absolute(p).into_os_string()),
        );
        args.push("--output_path_dir".into());
        args.push(absolute(&request.output_dir).into_os_string());

        let mut interposed: Vec<AuditRecord> = vec![AuditRecord::new(
            &script,
            AccessKind::Read,
            Origin::Workflow,
        )];
        interposed.extend(
            request
                .input_paths
                .iter()
                .map(|p| AuditRecord::new(p, AccessKind::Read, Origin::Workflow)),
        );
        let watch = vec![request.work_dir.clone(), request.output_dir.clone()];
        let mut outcome = self.run(
            &script,
            args,
            &request.work_dir,
            &request.code,
            request.timeout,
            &watch,
            interposed,
            Origin::Workflow,
        )?;
        outcome.produced_files = discover_outputs(&request.output_dir);
        Ok(self.publish(outcome))
    }

    /// Runs an exploration snippet. Input paths are reachable only through
    /// the code text; any file the snippet creates or modifies under its
    /// scratch directory or the inputs' directories is removed and reported.
    pub fn execute_snippet(
        &self,
        request: &ExecutionRequest,
    ) -> Result<ExecutionOutcome, SandboxError> {
        if request.mode != ExecutionMode::Snippet {
            return Err(SandboxError::WrongMode);
        }
        fs::create_dir_all(&request.output_dir).map_err(io_err(&request.output_dir))?;
        let script = self.materialize(&request.work_dir, &request.code)?;
        let mut watch = vec![request.output_dir.clone(), request.work_dir.clone()];
        for input in &request.input_paths {
            if let Some(parent) = input.parent() {
                if !watch.iter().any(|w| w == parent) {
                    watch.push(parent.to_path_buf());
                }
            }
        }
        let interposed = vec![AuditRecord::new(
            &script,
            AccessKind::Read,
            Origin::Workflow,
        )];

        let protected = &request.output_dir;
        let original_mode = audit::make_read_only(protected);
        let outcome = self.run(
            &script,
            Vec::new(),
            &request.work_dir,
            &request.code,
            request.timeout,
            &watch,
            interposed,
            Origin::Workflow,
        );
        audit::restore_mode(protected, original_mode);
        let mut outcome = outcome?;

        let written: Vec<PathBuf> = outcome
            .audit
            .iter()
            .filter(|r| r.access == AccessKind::Write && r.path != script)
            .map(|r| r.path.clone())
            .collect();
        if !written.is_empty() {
            outcome.write_violation = true;
            for path in &written {
                let _ = fs::remove_file(path);
                if !outcome.stderr.is_empty() && !outcome.stderr.ends_with('\n') {
                    outcome.stderr.push('\n');
                }
                outcome
                    .stderr
                    .push_str(&format!("{WRITE_BLOCKED_MARKER}: {}\n", path.display()));
            }
        }
        Ok(self.publish(outcome))
    }

    /// Runs a trusted evaluation script with free-form arguments. Only the
    /// evaluator calls this; its audit records carry [`Origin::Evaluator`].
    pub(crate) fn run_evaluation_script(
        &self,
        script: &Path,
        args: Vec<OsString>,
        work_dir: &Path,
        timeout: Duration,
        reads: &[PathBuf],
    ) -> Result<ExecutionOutcome, SandboxError> {
        fs::create_dir_all(work_dir).map_err(io_err(work_dir))?;
        let mut interposed = vec![AuditRecord::new(
            script,
            AccessKind::Read,
            Origin::Evaluator,
        )];
        interposed.extend(
            reads
                .iter()
                .map(|p| AuditRecord::new(p, AccessKind::Read, Origin::Evaluator)),
        );
        let outcome = self.run(
            script,
            args,
            work_dir,
            "",
            timeout,
            &[work_dir.to_path_buf()],
            interposed,
            Origin::Evaluator,
        )?;
        Ok(self.publish(outcome))
    }

    fn materialize(&self, work_dir: &Path, code: &str) -> Result<PathBuf, SandboxError> {
        fs::create_dir_all(work_dir).map_err(io_err(work_dir))?;
        let script = absolute(&work_dir.join(&self.config.script_file_name));
        fs::write(&script, code).map_err(io_err(&script))?;
        Ok(script)
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        script: &Path,
        args: Vec<OsString>,
        work_dir: &Path,
        code: &str,
        timeout: Duration,
        watch: &[PathBuf],
        mut audit: Vec<AuditRecord>,
        origin: Origin,
    ) -> Result<ExecutionOutcome, SandboxError> {
        let (program, leading) = self
            .config
            .runtime_cmd
            .split_first()
            .ok_or(SandboxError::NoRuntime)?;
        let mut argv: Vec<OsString> = leading.iter().map(OsString::from).collect();
        argv.push(script.as_os_str().to_owned());
        argv.extend(args);

        for path in literal_paths(code, work_dir) {
            if !audit.iter().any(|r| r.path == path) {
                audit.push(AuditRecord::new(&path, AccessKind::Read, origin));
            }
        }

        let before = Snapshot::take(watch);
        let started = self.clock.now();
        let finished = run_process(&ProcessSpec {
            program,
            args: &argv,
            cwd: work_dir,
            timeout,
            kill_grace: self.config.kill_grace,
        })
        .map_err(|source| SandboxError::Spawn {
            command: self.config.runtime_cmd.join(" "),
            source,
        })?;
        let duration = self.clock.since(started).as_secs_f64();
        let after = Snapshot::take(watch);
        for path in before.changed(&after) {
            audit.push(AuditRecord::new(&path, AccessKind::Write, origin));
        }

        let mut stderr = String::from_utf8_lossy(&finished.stderr).into_owned();
        let exit_ok = finished.success && !finished.timed_out;
        if finished.timed_out {
            if !stderr.is_empty() && !stderr.ends_with('\n') {
                stderr.push('\n');
            }
            stderr.push_str(&format!(
                "{TIMEOUT_MARKER}: killed after {:.1}s\n",
                timeout.as_secs_f64()
            ));
        } else if !exit_ok && stderr.trim().is_empty() {
            stderr = format!("[sandbox] process exited with status {:?}\n", finished.code);
        }
        Ok(ExecutionOutcome {
            exit_ok,
            exit_code: finished.code,
            stdout: String::from_utf8_lossy(&finished.stdout).into_owned(),
            stderr,
            duration,
            produced_files: Vec::new(),
            audit,
            timed_out: finished.timed_out,
            write_violation: false,
        })
    }

    fn publish(&self, outcome: ExecutionOutcome) -> ExecutionOutcome {
        self.audit_log
            .lock()
            .expect("audit lock poisoned")
            .extend(outcome.audit.iter().cloned());
        outcome
    }
}

/// Regular files under `dir`, recursively, sorted by path.
pub fn discover_outputs(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
}
