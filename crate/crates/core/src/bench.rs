//! Task-bundle discovery, suite runs, and the five suite metrics.
//!
//! A bundle is a directory holding `instruction.txt`, `inputs/`, `gt/` with
//! one ground-truth file, `eval.py`, and optionally `meta.json` with
//! `expected_suffix` and `time_cap` (seconds).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::Scalar;
use crate::gateway::{Gateway, GatewayError};
use crate::library::OperatorIndex;
use crate::workflow::{run_workflow, RunEnv, TaskSpec, WorkflowConfig, DEFAULT_TIME_CAP};

/// How script attempts are counted; written into every report.
pub const CRR_COUNTING: &str = "CRR counts every script handed to the executor, \
    initial generations and debugger fixes alike; exploration snippets and the \
    final re-execution are excluded.";

const SCORE_ONE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("no task records to aggregate")]
    EmptyRecords,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub final_score: f64,
    pub script_attempts: u32,
    pub runnable_attempts: u32,
    pub any_runnable: bool,
    pub tokens: u64,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
    /// Set when the workflow aborted; the task then scores 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Aggregate metrics on a 0–100 scale plus efficiency means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub crr_counting: String,
    pub tasks: usize,
    pub ats: f64,
    pub tsr: f64,
    pub psr: f64,
    pub crr: f64,
    pub trr: f64,
    pub avg_score: f64,
    pub avg_tokens: f64,
    pub avg_time: f64,
    pub script_attempts: u64,
    pub runnable_attempts: u64,
    pub per_task: Vec<TaskRecord>,
}

/// Result of scanning a suite root.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    /// Sorted by task id.
    pub tasks: Vec<TaskSpec>,
    /// Malformed bundles and why they were skipped.
    pub skipped: Vec<(PathBuf, String)>,
}

#[derive(Debug, Default, Deserialize)]
struct BundleMeta {
    expected_suffix: Option<String>,
    time_cap: Option<f64>,
}

fn regular_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let entries = fs::read_dir(dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

/// Reads one bundle directory.
pub fn load_bundle(dir: &Path) -> Result<TaskSpec, String> {
    let dir =
        &std::path::absolute(dir).map_err(|e| format!("cannot resolve {}: {e}", dir.display()))?;
    let task_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or("bundle directory name is not UTF-8")?
        .to_string();
    let instruction = fs::read_to_string(dir.join("instruction.txt"))
        .map_err(|e| format!("instruction.txt: {e}"))?;
    let instruction = instruction.trim().to_string();
    if instruction.is_empty() {
        return Err("instruction.txt is empty".into());
    }
    let eval_script_path = dir.join("eval.py");
    if !eval_script_path.is_file() {
        return Err("missing eval.py".into());
    }
    let input_paths = regular_files(&dir.join("inputs"))?;
    if input_paths.is_empty() {
        return Err("inputs/ holds no files".into());
    }
    let ground_truth = regular_files(&dir.join("gt"))?;
    let ground_truth_path = match ground_truth.as_slice() {
        [one] => one.clone(),
        [] => return Err("gt/ holds no file".into()),
        _ => return Err("gt/ holds more than one file".into()),
    };
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| format!("meta.json: {e}"))?;
        serde_json::from_str(&text).map_err(|e| format!("meta.json: {e}"))?
    } else {
        BundleMeta::default()
    };
    let expected_suffix = meta.expected_suffix.unwrap_or_else(|| {
        input_paths[0]
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("csv")
            .to_string()
    });
    let time_cap = match meta.time_cap {
        Some(secs) => Duration::try_from_secs_f64(secs)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| format!("meta.json: invalid time_cap {secs}"))?,
        None => DEFAULT_TIME_CAP,
    };
    Ok(TaskSpec {
        task_id,
        instruction,
        input_paths,
        expected_suffix,
        eval_script_path,
        ground_truth_path,
        time_cap,
    })
}

/// One spec per well-formed bundle under `root`; malformed ones are logged
/// and listed in `skipped`.
pub fn discover_tasks(root: &Path) -> Discovery {
    let mut discovery = Discovery::default();
    let entries = match fs::read_dir(root) {
        Ok(entries) => entries,
        Err(e) => {
            discovery.skipped.push((root.to_path_buf(), e.to_string()));
            return discovery;
        }
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        match load_bundle(&dir) {
            Ok(spec) => discovery.tasks.push(spec),
            Err(reason) => {
                log::warn!("skipping bundle {}: {reason}", dir.display());
                discovery.skipped.push((dir, reason));
            }
        }
    }
    discovery.tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    discovery
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

pub fn compute_metrics(records: &[TaskRecord]) -> Result<SuiteReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let n = records.len();
    let ats = 100.0 * records.iter().map(|r| r.final_score).sum::<f64>() / n as f64;
    let full = records
        .iter()
        .filter(|r| (r.final_score - 1.0).abs() <= SCORE_ONE_TOLERANCE)
        .count();
    let positive = records.iter().filter(|r| r.final_score > 0.0).count();
    let scripts: u64 = records.iter().map(|r| u64::from(r.script_attempts)).sum();
    let runnable: u64 = records.iter().map(|r| u64::from(r.runnable_attempts)).sum();
    let crr = if scripts == 0 {
        0.0
    } else {
        100.0 * runnable as f64 / scripts as f64
    };
    let trr = percent(records.iter().filter(|r| r.any_runnable).count(), n);
    let tsr = percent(full, n);
    let psr = percent(positive, n);
    Ok(SuiteReport {
        crr_counting: CRR_COUNTING.to_string(),
        tasks: n,
        ats,
        tsr,
        psr,
        crr,
        trr,
        avg_score: (ats + tsr + psr + crr + trr) / 5.0,
        avg_tokens: records.iter().map(|r| r.tokens as f64).sum::<f64>() / n as f64,
        avg_time: records.iter().map(|r| r.wall_time).sum::<f64>() / n as f64,
        script_attempts: scripts,
        runnable_attempts: runnable,
        per_task: records.to_vec(),
    })
}

/// Human-readable table: headline metrics, then one row per task.
pub fn render_table(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Tasks: {}", report.tasks);
    let _ = writeln!(out, "{}", report.crr_counting);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>11} {:>12} {:>10}",
        "ATS", "TSR", "PSR", "CRR", "TRR", "Avg. Score", "Avg. Tokens", "Avg. Time"
    );
    let _ = writeln!(
        out,
        "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>11.2} {:>12.1} {:>10.2}",
        report.ats,
        report.tsr,
        report.psr,
        report.crr,
        report.trr,
        report.avg_score,
        report.avg_tokens,
        report.avg_time
    );
    let _ = writeln!(out);
    let width = report
        .per_task
        .iter()
        .map(|r| r.task_id.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>9} {:>8} {:>9} {:>8}  Status",
        "Task", "Score", "Scripts", "Runnable", "Tokens", "Time"
    );
    for r in &report.per_task {
        let status = match (&r.failure, r.converged) {
            (Some(f), _) => format!("failed: {f}"),
            (None, true) => "converged".to_string(),
            (None, false) => "best of rounds".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<width$} {:>6.3} {:>9} {:>8} {:>9} {:>8.2}  {}",
            r.task_id,
            r.final_score,
            r.script_attempts,
            r.runnable_attempts,
            r.tokens,
            r.wall_time,
            status
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(report: &SuiteReport, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_text(&dir.join("report.json"), &json)?;
    write_text(&dir.join("report.txt"), &render_table(report))
}

/// Runs one task to a record; failures become zero-score records.
pub fn run_task<F: Scalar>(
    task: &TaskSpec,
    config: &WorkflowConfig,
    gateway: Result<Gateway, GatewayError>,
    library: &OperatorIndex<F>,
    env: &RunEnv,
) -> TaskRecord {
    let gateway = match gateway {
        Ok(g) => g,
        Err(e) => {
            return TaskRecord {
                task_id: task.task_id.clone(),
                final_score: 0.0,
                script_attempts: 0,
                runnable_attempts: 0,
                any_runnable: false,
                tokens: 0,
                wall_time: 0.0,
                converged: false,
                failure: Some(format!("gateway unavailable: {e}")),
            }
        }
    };
    match run_workflow(task, config, &gateway, library, env) {
        Ok(result) => TaskRecord {
            task_id: task.task_id.clone(),
            final_score: result.best_score,
            script_attempts: result.script_attempts,
            runnable_attempts: result.runnable_attempts,
            any_runnable: result.runnable_attempts > 0,
            tokens: result.usage.tokens(),
            wall_time: result.wall_time,
            converged: result.converged,
            failure: None,
        },
        Err(failure) => {
            log::warn!("task {} failed: {}", task.task_id, failure);
            TaskRecord {
                task_id: task.task_id.clone(),
                final_score: 0.0,
                script_attempts: failure.script_attempts,
                runnable_attempts: failure.runnable_attempts,
                any_runnable: failure.runnable_attempts > 0,
                tokens: failure.usage.tokens(),
                wall_time: failure.wall_time,
                converged: false,
                failure: Some(failure.error.to_string()),
            }
        }
    }
}

/// Runs every bundle under `root` with up to `parallel` concurrent tasks and
/// writes the report into `env.runs_root`. `gateway_for` supplies a fresh
/// gateway per task.
pub fn run_suite<F, G>(
    root: &Path,
    config: &WorkflowConfig,
    gateway_for: G,
    library: &OperatorIndex<F>,
    env: &RunEnv,
    parallel: usize,
) -> Result<SuiteReport, BenchError>
where
    F: Scalar,
    G: Fn(&TaskSpec) -> Result<Gateway, GatewayError> + Sync,
{
    let discovery = discover_tasks(root);
    let tasks = &discovery.tasks;
    let slots: Mutex<Vec<Option<TaskRecord>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = parallel.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let record = run_task(task, config, gateway_for(task), library, env);
                slots.lock().expect("slot lock poisoned")[i] = Some(record);
            });
        }
    });
    let records: Vec<TaskRecord> = slots
        .into_inner()
        .expect("slot lock poisoned")
        .into_iter()
        .map(|r| r.expect("every task produces a record"))
        .collect();
    let report = compute_metrics(&records)?;
    write_report(&report, &env.runs_root)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(score: f64, runnable: u32, scripts: u32) -> TaskRecord {
        TaskRecord {
            task_id: format!("t{score}"),
            final_score: score,
            script_attempts: scripts,
            runnable_attempts: runnable,
            any_runnable: runnable > 0,
            tokens: 10,
            wall_time: 1.0,
            converged: false,
            failure: None,
        }
    }

    #[test]
    fn score_rates_match_hand_arithmetic() {
        let r =
            compute_metrics(&[record(1.0, 1, 1), record(0.5, 1, 1), record(0.0, 1, 1)]).unwrap();
        assert!((r.ats - 50.0).abs() < 1e-9);
        assert!((r.tsr - 100.0 / 3.0).abs() < 1e-9);
        assert!((r.psr - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn attempt_rates_match_hand_arithmetic() {
        let r =
            compute_metrics(&[record(0.0, 2, 2), record(0.0, 1, 3), record(0.0, 0, 1)]).unwrap();
        assert!((r.crr - 50.0).abs() < 1e-9);
        assert!((r.trr - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_single_task_is_all_hundreds() {
        let r = compute_metrics(&[record(1.0, 1, 1)]).unwrap();
        for v in [r.ats, r.tsr, r.psr, r.crr, r.trr, r.avg_score] {
            assert_eq!(v, 100.0);
        }
    }

    #[test]
    fn near_one_counts_as_full_score() {
        let r = compute_metrics(&[record(1.0 - 1e-12, 1, 1)]).unwrap();
        assert_eq!(r.tsr, 100.0);
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(
            compute_metrics(&[]),
            Err(BenchError::EmptyRecords)
        ));
    }

    #[test]
    fn discovery_skips_malformed_bundles() {
        let root = tempfile::tempdir().unwrap();
        for id in ["b", "a"] {
            let dir = root.path().join(id);
            fs::create_dir_all(dir.join("inputs")).unwrap();
            fs::create_dir_all(dir.join("gt")).unwrap();
            fs::write(dir.join("instruction.txt"), "Sort rows.\n").unwrap();
            fs::write(dir.join("inputs/data.jsonl"), "{}\n").unwrap();
            fs::write(dir.join("gt/expected.jsonl"), "{}\n").unwrap();
            fs::write(dir.join("eval.py"), "print(1)\n").unwrap();
        }
        fs::remove_file(root.path().join("b/eval.py")).unwrap();
        let found = discover_tasks(root.path());
        assert_eq!(found.tasks.len(), 1);
        assert_eq!(found.tasks[0].task_id, "a");
        assert_eq!(found.tasks[0].expected_suffix, "jsonl");
        assert_eq!(found.skipped.len(), 1);
        assert!(found.skipped[0].1.contains("eval.py"));
    }

    #[test]
    fn empty_root_discovers_nothing() {
        let root = tempfile::tempdir().unwrap();
        let found = discover_tasks(root.path());
        assert!(found.tasks.is_empty() && found.skipped.is_empty());
    }

    #[test]
    fn table_lists_headline_columns_in_order() {
        let r = compute_metrics(&[record(1.0, 1, 1)]).unwrap();
        let table = render_table(&r);
        let header = table.lines().nth(3).unwrap();
        let cols = [
            "ATS",
            "TSR",
            "PSR",
            "CRR",
            "TRR",
            "Avg. Score",
            "Avg. Tokens",
            "Avg. Time",
        ];
        let positions: Vec<usize> = cols.iter().map(|c| header.find(c).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    fn arb_record() -> impl Strategy<Value = TaskRecord> {
        (
            prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
            0u32..6,
            0u32..6,
            0u64..10_000,
            0.0f64..100.0,
        )
            .prop_map(|(score, a, b, tokens, time)| {
                let (runnable, scripts) = (a.min(b), a.max(b));
                TaskRecord {
                    task_id: "t".into(),
                    final_score: score,
                    script_attempts: scripts,
                    runnable_attempts: runnable,
                    any_runnable: runnable > 0,
                    tokens,
                    wall_time: time,
                    converged: false,
                    failure: None,
                }
            })
    }

    proptest! {
        #[test]
        fn rates_are_percentages_and_full_implies_positive(records in prop::collection::vec(arb_record(), 1..20)) {
            let r = compute_metrics(&records).unwrap();
            for v in [r.ats, r.tsr, r.psr, r.crr, r.trr] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!(r.tsr <= r.psr);
            prop_assert_eq!(r.avg_score, (r.ats + r.tsr + r.psr + r.crr + r.trr) / 5.0);
        }
    }
}
