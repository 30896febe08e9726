#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use tablesmith::clock::FrozenClock;
use tablesmith::gateway::{AgentRole, Gateway, HashingEmbedder, MockChat, MockTurn};
use tablesmith::library::load_library;
use tablesmith::sandbox::Sandbox;
use tablesmith::workflow::{RunEnv, TaskSpec};
use tablesmith::Index;

/// Text planted in every ground-truth file so leaks are easy to find.
pub const GT_MARKER: &str = "GT_ONLY_7f3a";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn manifest() -> PathBuf {
    fixtures_dir().join("operators/manifest.json")
}

/// The fixture operator library, embedded in memory with mock vectors.
pub fn library() -> Index {
    let gateway = Gateway::mock(Vec::new());
    load_library::<f64>(&manifest())
        .unwrap()
        .build(&gateway)
        .unwrap()
}

pub fn mock_gateway(turns: Vec<MockTurn>) -> (Gateway, Arc<MockChat>) {
    let chat = Arc::new(MockChat::new(turns));
    let gateway = Gateway::new(chat.clone(), Arc::new(HashingEmbedder::default()))
        .with_clock(Arc::new(FrozenClock));
    (gateway, chat)
}

pub fn run_env(root: &Path) -> RunEnv {
    RunEnv {
        sandbox: Sandbox::default(),
        runs_root: root.join("runs"),
        clock: Arc::new(FrozenClock),
        settings: None,
    }
}

const SCORE_EVAL: &str = r#"import argparse

parser = argparse.ArgumentParser()
parser.add_argument("--pred", nargs="+", required=True)
parser.add_argument("--gt", required=True)
args = parser.parse_args()
with open(args.gt, encoding="utf-8") as f:
    f.read()
with open(args.pred[0], encoding="utf-8") as f:
    lines = [l for l in f.read().splitlines() if l.strip()]
print(lines[-1])
"#;

/// A bundle whose eval script prints the last line of the first output, so
/// each generated script decides its own score.
pub fn score_bundle(root: &Path, task_id: &str) -> TaskSpec {
    let dir = root.join("bundles").join(task_id);
    fs::create_dir_all(dir.join("inputs")).unwrap();
    fs::create_dir_all(dir.join("gt")).unwrap();
    fs::write(dir.join("instruction.txt"), "Clean the table.\n").unwrap();
    fs::write(dir.join("inputs/data.csv"), "id,value\n1,a\n2,b\n").unwrap();
    fs::write(
        dir.join("gt/expected.csv"),
        format!("id,value\n1,{GT_MARKER}\n"),
    )
    .unwrap();
    fs::write(dir.join("eval.py"), SCORE_EVAL).unwrap();
    TaskSpec {
        task_id: task_id.to_string(),
        instruction: "Clean the table.".to_string(),
        input_paths: vec![dir.join("inputs/data.csv")],
        expected_suffix: "csv".to_string(),
        eval_script_path: dir.join("eval.py"),
        ground_truth_path: dir.join("gt/expected.csv"),
        time_cap: Duration::from_secs(600),
    }
}

/// Script body writing `score` as the last line of `out.csv`.
pub fn score_code(score: f64) -> String {
    format!(
        r#"import argparse
import os


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--input", nargs="+", required=True)
    parser.add_argument("--output_path_dir", required=True)
    args = parser.parse_args()
    with open(os.path.join(args.output_path_dir, "out.csv"), "w", encoding="utf-8") as f:
        f.write("score\n{score}\n")


if __name__ == "__main__":
    main()
"#
    )
}

pub fn failing_code(tag: &str) -> String {
    format!("raise RuntimeError(\"failure {tag}\")\n")
}

pub fn interpreter(multi_step: bool) -> MockTurn {
    MockTurn::new(
        AgentRole::Interpreter,
        serde_json::json!({
            "operation": "1:clean values",
            "reason": "values need cleaning",
            "is_dag": multi_step,
            "task_type": "TableCleaning-ErrorDetectionANDCorrection",
            "suffix": "csv",
        })
        .to_string(),
    )
}

pub fn profile(note: &str) -> MockTurn {
    MockTurn::new(
        AgentRole::Profiler,
        format!("<THINK>Done.</THINK>\n<ANSWER>{{\"data\": {{\"note\": \"{note}\"}}}}</ANSWER>"),
    )
}

/// A profiler step that runs `code` before any answer.
pub fn profile_snippet(code: &str) -> MockTurn {
    MockTurn::new(
        AgentRole::Profiler,
        format!("<THINK>Look at the data.</THINK>\n<ACTION>\n```python\n{code}\n```\n</ACTION>"),
    )
}

pub fn generate(code: &str) -> MockTurn {
    MockTurn::new(AgentRole::Generator, format!("```python\n{code}```"))
}

pub fn debug_fix(code: &str) -> MockTurn {
    MockTurn::new(
        AgentRole::Debugger,
        serde_json::json!({"code": code, "reason": "fixed"}).to_string(),
    )
}

pub fn summary(insight: &str) -> MockTurn {
    MockTurn::new(
        AgentRole::Summarizer,
        format!("<THINK>Checked.</THINK>\n<ANSWER>{insight}</ANSWER>"),
    )
}

pub fn decomposer() -> MockTurn {
    MockTurn::new(
        AgentRole::Decomposer,
        r#"{"TableCleaning-DataImputation": "Fill missing values", "TableTransformation-Sorting": "Sort rows by id"}"#,
    )
}

/// Turns for one single-step round that scores `score`; the summarizer turn
/// is included when `summarized`.
pub fn scoring_round(round: u32, score: f64, summarized: bool) -> Vec<MockTurn> {
    let mut turns = vec![
        profile(&format!("round {round}")),
        generate(&score_code(score)),
    ];
    if summarized {
        turns.push(summary(&format!("insight after round {round}")));
    }
    turns
}
