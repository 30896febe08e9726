//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tablesmith::bench::{compute_metrics, run_suite, TaskRecord};
use tablesmith::clock::FrozenClock;
use tablesmith::gateway::{AgentRole, Gateway, HashingEmbedder, MockChat, MockTurn, UsageTotals};
use tablesmith::library::{load_library, retrieve_single};
use tablesmith::prompts;
use tablesmith::react::{
    parse_turn, render_turn, run_react_loop, SnippetEnv, TagKind, OBSERVATION_HEADER,
};
use tablesmith::sandbox::{ExecutionMode, ExecutionRequest, Origin, Sandbox, TIMEOUT_MARKER};
use tablesmith::workflow::{
    finalize, run_workflow, CandidateProgram, RunEnv, TaskSpec, WorkflowConfig, WorkflowMemory,
};
use tablesmith::Index;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [(&str, Duration, Check); 9] = [
        (
            "algorithm conformance",
            Duration::from_secs(5),
            algorithm_conformance,
        ),
        ("finalizer oracle", Duration::from_secs(1), finalizer_oracle),
        ("retrieval oracle", Duration::from_secs(5), retrieval_oracle),
        ("metric fixtures", Duration::from_secs(10), metric_fixtures),
        (
            "ground-truth isolation",
            Duration::from_secs(30),
            gt_isolation,
        ),
        ("react engine", Duration::from_secs(5), react_engine),
        ("sandbox", Duration::from_secs(10), sandbox),
        ("debug loop", Duration::from_secs(10), debug_loop),
        (
            "hyperparameter surface",
            Duration::from_secs(60),
            hyperparameter_surface,
        ),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|panic| Err(format!("panicked: {}", panic_text(&panic))));
        let elapsed = started.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("over time budget ({detail})")),
            other => other,
        };
        let (status, detail) = match result {
            Ok(detail) => ("PASS", detail),
            Err(reason) => {
                failed += 1;
                ("FAIL", reason)
            }
        };
        println!(
            "{status} {name:<24} {:>7.2}s / {:>3}s  {detail}",
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_text(panic: &Box<dyn std::any::Any + Send>) -> String {
    panic
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn manifest() -> PathBuf {
    fixtures().join("operators/manifest.json")
}

fn library() -> Index {
    load_library::<f64>(&manifest())
        .unwrap()
        .build(&Gateway::mock(Vec::new()))
        .unwrap()
}

fn tablesmith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tablesmith"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

const SCORE_EVAL: &str = "import argparse\n\
p = argparse.ArgumentParser()\n\
p.add_argument('--pred', nargs='+')\n\
p.add_argument('--gt')\n\
a = p.parse_args()\n\
open(a.gt).read()\n\
print([l for l in open(a.pred[0]).read().splitlines() if l.strip()][-1])\n";

/// A bundle whose eval prints the last line of the prediction, so each
/// scripted program chooses its own score.
fn score_bundle(root: &Path, id: &str) -> TaskSpec {
    let dir = root.join(id);
    fs::create_dir_all(dir.join("inputs")).unwrap();
    fs::create_dir_all(dir.join("gt")).unwrap();
    fs::write(dir.join("instruction.txt"), "Clean the table.\n").unwrap();
    fs::write(dir.join("inputs/data.csv"), "id,value\n1,a\n2,b\n").unwrap();
    fs::write(dir.join("gt/expected.csv"), "id,value\n1,GT_ONLY\n").unwrap();
    fs::write(dir.join("eval.py"), SCORE_EVAL).unwrap();
    tablesmith::bench::load_bundle(&dir).unwrap()
}

fn score_code(score: f64) -> String {
    format!(
        "import argparse, os\n\
p = argparse.ArgumentParser()\n\
p.add_argument('--input', nargs='+')\n\
p.add_argument('--output_path_dir')\n\
a = p.parse_args()\n\
open(os.path.join(a.output_path_dir, 'out.csv'), 'w').write('score\\n{score}\\n')\n"
    )
}

fn failing_code(tag: &str) -> String {
    format!("raise RuntimeError('failure {tag}')\n")
}

fn turn(role: AgentRole, text: impl Into<String>) -> MockTurn {
    MockTurn::new(role, text.into())
}

fn interpreter() -> MockTurn {
    turn(
        AgentRole::Interpreter,
        json!({
            "operation": "1:clean values",
            "reason": "values need cleaning",
            "is_dag": false,
            "task_type": "TableCleaning-ErrorDetectionANDCorrection",
            "suffix": "csv",
        })
        .to_string(),
    )
}

fn profile() -> MockTurn {
    turn(
        AgentRole::Profiler,
        "<THINK>ok</THINK><ANSWER>{\"data\": {}}</ANSWER>",
    )
}

fn generate(code: &str) -> MockTurn {
    turn(AgentRole::Generator, format!("```python\n{code}```"))
}

fn debug_fix(code: &str) -> MockTurn {
    turn(
        AgentRole::Debugger,
        json!({"code": code, "reason": "fixed"}).to_string(),
    )
}

fn summary() -> MockTurn {
    turn(
        AgentRole::Summarizer,
        "<THINK>checked</THINK><ANSWER>raise the score</ANSWER>",
    )
}

fn frozen_gateway(turns: Vec<MockTurn>) -> (Gateway, Arc<MockChat>) {
    let chat = Arc::new(MockChat::new(turns));
    let gateway = Gateway::new(chat.clone(), Arc::new(HashingEmbedder::default()))
        .with_clock(Arc::new(FrozenClock));
    (gateway, chat)
}

fn env(runs: PathBuf) -> RunEnv {
    RunEnv {
        sandbox: Sandbox::default().with_clock(Arc::new(FrozenClock)),
        runs_root: runs,
        clock: Arc::new(FrozenClock),
        settings: None,
    }
}

fn algorithm_conformance() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let task = score_bundle(dir.path(), "conform");
    let turns = vec![
        interpreter(),
        profile(),
        generate(&score_code(0.3)),
        summary(),
        profile(),
        generate(&score_code(0.9)),
    ];
    let fixture = dir.path().join("mock.json");
    fs::write(&fixture, serde_json::to_string(&turns).unwrap()).unwrap();
    let runs = dir.path().join("runs");
    let out = tablesmith(&[
        "--backend",
        "mock",
        "--mock-fixture",
        fixture.to_str().unwrap(),
        "--library",
        manifest().to_str().unwrap(),
        "--runs-dir",
        runs.to_str().unwrap(),
        "--threshold",
        "0.8",
        "run",
        task.ground_truth_path
            .parent()
            .unwrap()
            .parent()
            .unwrap()
            .to_str()
            .unwrap(),
    ]);
    ensure!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = runs.join("conform");
    let result = read_json(&run_dir.join("result.json"))?;
    ensure!(
        result["converged"] == true,
        "converged={}",
        result["converged"]
    );
    ensure!(
        result["best_round"] == 2,
        "best_round={}",
        result["best_round"]
    );
    ensure!(
        result["rounds_run"] == 2,
        "rounds_run={}",
        result["rounds_run"]
    );
    ensure!(
        !run_dir.join("round_3").exists(),
        "round_3 directory exists"
    );
    let mut calls = 0;
    for path in [
        run_dir.join("transcript.json"),
        run_dir.join("round_1/transcript.json"),
        run_dir.join("round_2/transcript.json"),
    ] {
        for ex in read_json(&path)?["exchanges"].as_array().unwrap() {
            ensure!(
                ex["round"].as_u64().unwrap() <= 2,
                "agent call in round {}",
                ex["round"]
            );
            calls += 1;
        }
    }
    ensure!(
        calls == turns.len(),
        "{calls} agent calls, expected {}",
        turns.len()
    );
    Ok(format!(
        "converged at round 2 with {calls} agent calls, none in round 3"
    ))
}

/// First score reaching θ; otherwise the maximum, earliest on ties.
fn brute_force_best(scores: &[f64], theta: f64) -> (usize, bool) {
    for (i, s) in scores.iter().enumerate() {
        if *s >= theta {
            return (i, true);
        }
    }
    for i in 0..scores.len() {
        let beaten_later = scores[i + 1..].iter().any(|s| *s > scores[i]);
        let beaten_earlier = scores[..i].iter().any(|s| *s >= scores[i]);
        if !beaten_later && !beaten_earlier {
            return (i, false);
        }
    }
    unreachable!()
}

fn finalizer_oracle() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..1000 {
        let len = rng.gen_range(1..=5);
        // Coarse grid so ties and exact-threshold hits occur.
        let scores: Vec<f64> = (0..len)
            .map(|_| rng.gen_range(0..=10) as f64 / 10.0)
            .collect();
        let theta = rng.gen_range(0..=10) as f64 / 10.0;
        let mut memory = WorkflowMemory::new();
        for (i, score) in scores.iter().enumerate() {
            memory
                .push(CandidateProgram {
                    round: i as u32 + 1,
                    code: String::new(),
                    runnable: *score > 0.0,
                    score: *score,
                    output_paths: Vec::new(),
                    script_attempts: 1,
                    runnable_attempts: 1,
                    usage: UsageTotals::default(),
                })
                .unwrap();
        }
        let (best, converged) = finalize(&memory, theta).map_err(|e| e.to_string())?;
        let (expected, expected_converged) = brute_force_best(&scores, theta);
        ensure!(
            best.round as usize == expected + 1 && converged == expected_converged,
            "case {case}: scores {scores:?} θ={theta} gave round {} converged={converged}",
            best.round
        );
    }
    Ok("1000 sequences agree".into())
}

fn scan(gateway: &Gateway, index: &Index, query: &str, k: usize, theta: f64) -> Vec<String> {
    let q = gateway.embed(query).unwrap();
    let q = q.values();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, String)> = index
        .entries()
        .iter()
        .map(|e| {
            let d = gateway.embed(&e.description).unwrap();
            let d = d.values();
            let dot: f64 = q.iter().zip(d).map(|(a, b)| a * b).sum();
            (dot / (norm(q) * norm(d)), e.id.clone())
        })
        .filter(|(s, _)| *s >= theta - 1e-12)
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn retrieved(gateway: &Gateway, index: &Index, query: &str, k: usize, theta: f64) -> Vec<String> {
    retrieve_single(query, index, k, theta, gateway)
        .unwrap()
        .into_iter()
        .map(|h| h.id)
        .collect()
}

fn retrieval_oracle() -> Result<String, String> {
    let index = library();
    ensure!(
        index.len() == 12,
        "fixture index has {} operators",
        index.len()
    );
    let gateway = Gateway::mock(Vec::new());
    let vocab: Vec<String> = index
        .entries()
        .iter()
        .flat_map(|e| {
            e.description
                .split_whitespace()
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = StdRng::seed_from_u64(11);
    let mut nonempty = 0;
    for _ in 0..100 {
        // Half the queries lean on one description so the threshold is reachable.
        let mut words: Vec<String> = if rng.gen_bool(0.5) {
            let entry = index.entries().choose(&mut rng).unwrap();
            entry
                .description
                .split_whitespace()
                .filter(|_| rng.gen_bool(0.7))
                .map(str::to_lowercase)
                .collect()
        } else {
            Vec::new()
        };
        for _ in 0..rng.gen_range(1..=4) {
            words.push(vocab.choose(&mut rng).unwrap().clone());
        }
        let query = words.join(" ");
        for k in 1..=4 {
            let got = retrieved(&gateway, &index, &query, k, 0.5);
            let want = scan(&gateway, &index, &query, k, 0.5);
            ensure!(got == want, "{query:?} k={k}: {got:?} != {want:?}");
            nonempty += usize::from(!got.is_empty());
            let theta = rng.gen_range(0.0..0.8);
            let loose = retrieved(&gateway, &index, &query, k, theta);
            let strict = retrieved(&gateway, &index, &query, k, theta + 0.1);
            ensure!(
                strict.iter().all(|id| loose.contains(id)),
                "{query:?}: raising θ added hits"
            );
            let wider = retrieved(&gateway, &index, &query, k + 1, theta);
            ensure!(
                wider.starts_with(&loose),
                "{query:?}: k+1 is not an extension"
            );
        }
    }
    Ok(format!("400 rankings agree, {nonempty} non-empty"))
}

fn record(score: f64, runnable: u32, scripts: u32) -> TaskRecord {
    TaskRecord {
        task_id: format!("t{score}-{runnable}-{scripts}"),
        final_score: score,
        script_attempts: scripts,
        runnable_attempts: runnable,
        any_runnable: runnable > 0,
        tokens: 0,
        wall_time: 0.0,
        converged: false,
        failure: None,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn metric_fixtures() -> Result<String, String> {
    let r = compute_metrics(&[record(1.0, 1, 1), record(0.5, 1, 1), record(0.0, 1, 1)]).unwrap();
    ensure!(close(r.ats, 50.0), "ats {}", r.ats);
    ensure!(close(r.tsr, 100.0 / 3.0), "tsr {}", r.tsr);
    ensure!(close(r.psr, 200.0 / 3.0), "psr {}", r.psr);

    let r = compute_metrics(&[record(1.0, 2, 2), record(1.0, 1, 3), record(1.0, 0, 1)]).unwrap();
    ensure!(close(r.crr, 50.0), "crr {}", r.crr);
    ensure!(close(r.trr, 200.0 / 3.0), "trr {}", r.trr);

    let r = compute_metrics(&[record(1.0, 1, 1)]).unwrap();
    for (name, v) in [
        ("ats", r.ats),
        ("tsr", r.tsr),
        ("psr", r.psr),
        ("crr", r.crr),
        ("trr", r.trr),
    ] {
        ensure!(v == 100.0, "{name} {v}");
    }
    ensure!(r.avg_score == 100.0, "avg_score {}", r.avg_score);

    let ws = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), ws.path());
    let runs = ws.path().join("runs");
    let out = tablesmith(&[
        "--mock-fixture",
        ws.path().join("mock").to_str().unwrap(),
        "--library",
        ws.path().join("operators/manifest.json").to_str().unwrap(),
        "--runs-dir",
        runs.to_str().unwrap(),
        "suite",
        ws.path().join("suite").to_str().unwrap(),
    ]);
    ensure!(
        out.status.success(),
        "suite failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&runs.join("report.json"))?;
    let five = ["ats", "tsr", "psr", "crr", "trr"].map(|k| report[k].as_f64().unwrap());
    let mean = (five[0] + five[1] + five[2] + five[3] + five[4]) / 5.0;
    ensure!(
        report["avg_score"].as_f64() == Some(mean),
        "avg_score is not the five-metric mean"
    );
    let written = fs::read(runs.join("report.json")).unwrap();
    let golden = fs::read(fixtures().join("golden/report.json")).unwrap();
    ensure!(
        written == golden,
        "report.json differs from the golden file"
    );
    Ok("worked examples exact, suite report matches golden".into())
}

fn gt_isolation() -> Result<String, String> {
    let ws = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), ws.path());
    let suite = ws.path().join("suite");
    let mock_dir = ws.path().join("mock");
    let env = env(ws.path().join("runs"));
    let report = run_suite(
        &suite,
        &WorkflowConfig::default(),
        |task: &TaskSpec| {
            let chat = MockChat::from_fixture(&mock_dir.join(format!("{}.json", task.task_id)))?;
            Ok(Gateway::new(
                Arc::new(chat),
                Arc::new(HashingEmbedder::default()),
            ))
        },
        &library(),
        &env,
        1,
    )
    .map_err(|e| e.to_string())?;

    let audit = env.sandbox.audit_log();
    let in_gt = |p: &Path| p.components().any(|c| c.as_os_str() == "gt");
    let evaluator_reads = audit
        .iter()
        .filter(|r| r.origin == Origin::Evaluator && in_gt(&r.path))
        .count();
    ensure!(
        evaluator_reads >= report.tasks,
        "evaluator GT reads not audited"
    );
    if let Some(r) = audit
        .iter()
        .find(|r| r.origin != Origin::Evaluator && in_gt(&r.path))
    {
        return Err(format!(
            "{:?} record touched {}",
            r.origin,
            r.path.display()
        ));
    }

    // Lines that exist only in ground truth, never in any input.
    let mut secrets = Vec::new();
    for task in fs::read_dir(&suite).unwrap() {
        let task = task.unwrap().path();
        let mut inputs = String::new();
        for input in fs::read_dir(task.join("inputs")).unwrap() {
            inputs.push_str(&fs::read_to_string(input.unwrap().path()).unwrap());
        }
        for gt in fs::read_dir(task.join("gt")).unwrap() {
            let text = fs::read_to_string(gt.unwrap().path()).unwrap();
            secrets.push(text.clone());
            secrets.extend(
                text.lines()
                    .filter(|l| !l.trim().is_empty() && !inputs.contains(*l))
                    .map(str::to_string),
            );
        }
    }
    let mut prompts = 0;
    for entry in walk(&ws.path().join("runs")) {
        if entry.file_name().unwrap() != "transcript.json" {
            continue;
        }
        for ex in read_json(&entry)?["exchanges"].as_array().unwrap() {
            for field in ["system_prompt", "user_message"] {
                let text = ex[field].as_str().unwrap();
                ensure!(!text.contains("/gt/"), "prompt names a gt path");
                if let Some(s) = secrets.iter().find(|s| text.contains(s.as_str())) {
                    return Err(format!("prompt contains ground-truth text {s:?}"));
                }
            }
            prompts += 1;
        }
    }
    ensure!(prompts > 0, "no prompts recorded");
    Ok(format!(
        "{} audit records, {evaluator_reads} evaluator GT reads, {prompts} prompts clean",
        audit.len()
    ))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn example_turns(template: &str) -> Vec<String> {
    let example = &template[template.find("[EXAMPLE]").unwrap() + "[EXAMPLE]".len()..];
    let mut turns = Vec::new();
    let mut rest = example;
    while let Some(at) = rest.find(OBSERVATION_HEADER) {
        turns.push(rest[..at].to_string());
        let after = &rest[at..];
        rest = &after[after.find("<THINK>").unwrap_or(after.len())..];
    }
    turns.push(rest.to_string());
    turns
}

fn action(code: &str) -> MockTurn {
    turn(
        AgentRole::Profiler,
        format!("<THINK>step</THINK>\n<ACTION>\n```python\n{code}\n```\n</ACTION>"),
    )
}

fn react_engine() -> Result<String, String> {
    for (name, template) in [
        ("profiler", prompts::PROFILER),
        ("summarizer", prompts::SUMMARIZER),
    ] {
        let turns = example_turns(template);
        ensure!(turns.len() == 2, "{name} example has {} turns", turns.len());
        for t in &turns {
            let events = parse_turn(t).map_err(|e| format!("{name}: {e}"))?;
            ensure!(
                parse_turn(&render_turn(&events)).map_err(|e| e.to_string())? == events,
                "{name} example does not round-trip"
            );
        }
        let last = parse_turn(&turns[1]).unwrap();
        ensure!(
            last.last().unwrap().kind == TagKind::Answer,
            "{name} example lacks an answer"
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let snippet_env = SnippetEnv {
        sandbox: Sandbox::default(),
        readable_paths: Vec::new(),
        scratch_root: dir.path().join("scratch"),
        timeout: Duration::from_secs(30),
    };
    let gateway = Gateway::mock(vec![
        action("print('{\"columns\": [\"id\", \"amount\"]}')"),
        action("for i in range(3):\n    print(i)"),
        turn(
            AgentRole::Profiler,
            "<THINK>done</THINK><ANSWER>{}</ANSWER>",
        ),
    ]);
    let transcript = run_react_loop(AgentRole::Profiler, "sys", "go", 7, &snippet_env, &gateway)
        .map_err(|e| e.to_string())?;
    ensure!(
        transcript.steps_used == 3,
        "steps_used {}",
        transcript.steps_used
    );
    for step in &transcript.steps[..2] {
        let stdout = &step.outcome.as_ref().unwrap().stdout;
        ensure!(
            step.observation.as_ref() == Some(stdout),
            "observation differs from stdout"
        );
    }
    ensure!(
        transcript.steps[1].observation.as_deref() == Some("0\n1\n2\n"),
        "second observation {:?}",
        transcript.steps[1].observation
    );

    let gateway = Gateway::mock((0..10).map(|_| action("print(1)")).collect());
    let bounded = run_react_loop(AgentRole::Profiler, "sys", "go", 3, &snippet_env, &gateway)
        .map_err(|e| e.to_string())?;
    ensure!(
        bounded.steps_used == 3 && bounded.answer.is_none(),
        "never-answering loop used {} steps",
        bounded.steps_used
    );
    Ok("examples round-trip, observations match stdout, bound of 3 holds".into())
}

fn sandbox() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = Sandbox::default();
    let request = |name: &str, code: String, inputs: Vec<PathBuf>, timeout: u64| {
        let out = dir.path().join(name).join("out");
        fs::create_dir_all(&out).unwrap();
        ExecutionRequest {
            code,
            input_paths: inputs,
            output_dir: out,
            work_dir: dir.path().join(name).join("work"),
            mode: ExecutionMode::FullScript,
            timeout: Duration::from_secs(timeout),
        }
    };

    let pid_file = dir.path().join("pid");
    let code = format!(
        "import os\nopen({:?}, 'w').write(str(os.getpid()))\nwhile True:\n    pass\n",
        pid_file.to_str().unwrap()
    );
    let started = Instant::now();
    let outcome = sandbox
        .execute_full(&request("loop", code, vec![], 2))
        .map_err(|e| e.to_string())?;
    let killed_after = started.elapsed();
    ensure!(
        outcome.timed_out && outcome.stderr.contains(TIMEOUT_MARKER),
        "loop not timed out"
    );
    ensure!(
        killed_after <= Duration::from_millis(2500),
        "killed after {killed_after:?}"
    );
    let pid = fs::read_to_string(&pid_file).unwrap();
    ensure!(
        !Path::new(&format!("/proc/{pid}")).exists(),
        "process {pid} survived"
    );

    let body = b"id,name\n1,a\n2,b\n3,c\n";
    let input = dir.path().join("in.csv");
    fs::write(&input, [&[0xEF, 0xBB, 0xBF][..], body].concat()).unwrap();
    let copy = "import argparse, os\n\
p = argparse.ArgumentParser()\n\
p.add_argument('--input', nargs='+')\n\
p.add_argument('--output_path_dir')\n\
a = p.parse_args()\n\
text = open(a.input[0], encoding='utf-8-sig').read()\n\
open(os.path.join(a.output_path_dir, 'copy.csv'), 'w', newline='').write(text)\n\
open('stray.csv', 'w').write(text)\n";
    let req = request("copy", copy.to_string(), vec![input], 30);
    let outcome = sandbox.execute_full(&req).map_err(|e| e.to_string())?;
    ensure!(outcome.exit_ok, "copy failed: {}", outcome.stderr);
    ensure!(
        outcome.produced_files == vec![req.output_dir.join("copy.csv")],
        "produced {:?}",
        outcome.produced_files
    );
    ensure!(
        fs::read(&outcome.produced_files[0]).unwrap() == body,
        "copy is not byte-equal"
    );
    Ok(format!(
        "killed after {:.2}s, copy byte-equal, discovery confined",
        killed_after.as_secs_f64()
    ))
}

fn debug_loop() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let index = library();
    let config = WorkflowConfig {
        max_rounds: 1,
        ..WorkflowConfig::default()
    };

    let task = score_bundle(dir.path(), "three");
    let (gateway, _) = frozen_gateway(vec![
        interpreter(),
        profile(),
        generate(&failing_code("one")),
        debug_fix(&failing_code("two")),
        debug_fix(&score_code(0.9)),
    ]);
    let result = run_workflow(
        &task,
        &config,
        &gateway,
        &index,
        &env(dir.path().join("runs")),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        result.script_attempts == 3 && result.runnable_attempts == 1,
        "attempts {}/{}",
        result.runnable_attempts,
        result.script_attempts
    );
    let crr = compute_metrics(&[record(result.best_score, 1, 3)])
        .unwrap()
        .crr;
    ensure!(close(crr, 100.0 / 3.0), "crr {crr}");

    let task = score_bundle(dir.path(), "six");
    let mut turns = vec![interpreter(), profile(), generate(&failing_code("g"))];
    turns.extend((0..6).map(|n| debug_fix(&failing_code(&format!("f{n}")))));
    turns.push(summary());
    let (gateway, chat) = frozen_gateway(turns);
    let result = run_workflow(
        &task,
        &config,
        &gateway,
        &index,
        &env(dir.path().join("runs")),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        result.script_attempts == 6,
        "script_attempts {}",
        result.script_attempts
    );
    ensure!(result.best_score == 0.0, "score {}", result.best_score);
    ensure!(
        chat.remaining(AgentRole::Debugger) == 1,
        "debugger asked past the limit"
    );
    Ok("3 scripts / 1 runnable, 6 failures stop with score 0".into())
}

fn hyperparameter_surface() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let queries = [
        "fill missing values",
        "remove duplicate rows",
        "sort rows by a column",
        "filter rows",
    ];
    let mut sets_per_query = vec![BTreeSet::new(); queries.len()];
    for k in 1..=4 {
        for theta in ["0.2", "0.5", "0.8"] {
            for (q, query) in queries.iter().enumerate() {
                let out = tablesmith(&[
                    "--library",
                    manifest().to_str().unwrap(),
                    "--top-k",
                    &k.to_string(),
                    "--sim-threshold",
                    theta,
                    "retrieve",
                    "--query",
                    query,
                ]);
                ensure!(
                    out.status.success(),
                    "retrieve failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
                let reply: Value =
                    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
                ensure!(reply["top_k"] == k, "top_k echoed as {}", reply["top_k"]);
                ensure!(
                    reply["sim_threshold"].as_f64() == theta.parse().ok(),
                    "sim_threshold echoed as {}",
                    reply["sim_threshold"]
                );
                let ids: Vec<String> = reply["results"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|r| r["id"].as_str().unwrap().to_string())
                    .collect();
                ensure!(ids.len() <= k, "{} hits for k={k}", ids.len());
                sets_per_query[q].insert(ids);
            }

            let task = score_bundle(dir.path(), &format!("k{k}_t{theta}"));
            let fixture = dir.path().join(format!("k{k}_t{theta}.json"));
            let turns = vec![interpreter(), profile(), generate(&score_code(1.0))];
            fs::write(&fixture, serde_json::to_string(&turns).unwrap()).unwrap();
            let runs = dir.path().join("runs");
            let bundle = task.eval_script_path.parent().unwrap();
            let out = tablesmith(&[
                "--mock-fixture",
                fixture.to_str().unwrap(),
                "--library",
                manifest().to_str().unwrap(),
                "--runs-dir",
                runs.to_str().unwrap(),
                "--top-k",
                &k.to_string(),
                "--sim-threshold",
                theta,
                "run",
                bundle.to_str().unwrap(),
            ]);
            ensure!(
                out.status.success(),
                "run failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let result = read_json(&runs.join(&task.task_id).join("result.json"))?;
            ensure!(
                result["config"]["top_k"] == k,
                "run echoed top_k {}",
                result["config"]["top_k"]
            );
            ensure!(
                result["config"]["sim_threshold"].as_f64() == theta.parse().ok(),
                "run echoed sim_threshold {}",
                result["config"]["sim_threshold"]
            );
        }
    }
    let most = sets_per_query.iter().map(BTreeSet::len).max().unwrap_or(0);
    ensure!(
        most > 1,
        "every query retrieved the same set under all 12 settings"
    );
    Ok(format!(
        "12 settings echoed, up to {most} distinct retrieval sets per query"
    ))
}
