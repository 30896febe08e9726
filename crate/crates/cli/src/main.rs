use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tablesmith::bench::{self, SuiteReport};
use tablesmith::clock::{Clock, FrozenClock, SystemClock};
use tablesmith::config::{BackendKind, ConfigLayer, EngineConfig};
use tablesmith::library::{self, index_paths, retrieve_single};
use tablesmith::sandbox::{Sandbox, SandboxConfig};
use tablesmith::workflow::{run_workflow, RunEnv};
use tablesmith::Index;

/// Profiling-driven multi-agent table processing.
#[derive(Debug, Parser)]
#[command(name = "tablesmith", version)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Flags {
    /// Key/value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `mock` or `real`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Mock transcript file, or a directory of `<task_id>.json` files.
    #[arg(long, global = true)]
    mock_fixture: Option<PathBuf>,
    #[arg(long, global = true)]
    max_rounds: Option<u32>,
    /// Success threshold on the task score.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    sim_threshold: Option<f64>,
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Interpreter command for generated scripts, e.g. `python3`.
    #[arg(long, global = true)]
    runtime_cmd: Option<String>,
    /// Operator manifest.
    #[arg(long, global = true)]
    library: Option<PathBuf>,
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one task bundle.
    Run { task_dir: PathBuf },
    /// Run every bundle under a directory and write a report.
    Suite { root: PathBuf },
    /// Embed the operator manifest and persist the index.
    Index { manifest: Option<PathBuf> },
    /// Show which operators a query retrieves.
    Retrieve {
        #[arg(long)]
        query: String,
    },
    /// Print a saved report as a table.
    Report { report: PathBuf },
}

impl Flags {
    fn layer(&self) -> ConfigLayer {
        let mut layer = ConfigLayer::new("command line");
        if let Some(v) = &self.backend {
            layer.set("backend", v);
        }
        if let Some(v) = &self.mock_fixture {
            layer.set("mock_fixture", v.display());
        }
        if let Some(v) = self.max_rounds {
            layer.set("max_rounds", v);
        }
        if let Some(v) = self.threshold {
            layer.set("success_threshold", v);
        }
        if let Some(v) = self.top_k {
            layer.set("top_k", v);
        }
        if let Some(v) = self.sim_threshold {
            layer.set("sim_threshold", v);
        }
        if let Some(v) = self.parallel {
            layer.set("parallel", v);
        }
        if let Some(v) = &self.runtime_cmd {
            layer.set("runtime_cmd", v);
        }
        if let Some(v) = &self.library {
            layer.set("library", v.display());
        }
        if let Some(v) = &self.runs_dir {
            layer.set("runs_dir", v.display());
        }
        layer
    }

    /// Defaults, then the config file, then the environment, then flags.
    fn resolve(&self) -> Result<EngineConfig> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(ConfigLayer::read(path)?);
        }
        layers.push(ConfigLayer::from_env(std::env::vars()));
        layers.push(self.layer());
        let config = EngineConfig::resolve(&layers)?;
        config.workflow.validate()?;
        Ok(config)
    }
}

fn clock_for(config: &EngineConfig) -> Arc<dyn Clock> {
    match config.backend {
        BackendKind::Mock => Arc::new(FrozenClock),
        BackendKind::Real => Arc::new(SystemClock::new()),
    }
}

fn run_env(config: &EngineConfig) -> RunEnv {
    let clock = clock_for(config);
    RunEnv {
        sandbox: Sandbox::new(SandboxConfig::with_runtime(&config.runtime_cmd))
            .with_clock(Arc::clone(&clock)),
        runs_root: config.runs_dir.clone(),
        clock,
        settings: Some(config.settings_echo()),
    }
}

fn load_index(config: &EngineConfig, manifest: &Path) -> Result<Index> {
    let gateway = config.gateway(None)?;
    library::load_or_build(manifest, &gateway)
        .with_context(|| format!("cannot build operator index from {}", manifest.display()))
}

fn cmd_run(config: &EngineConfig, task_dir: &Path) -> Result<()> {
    if !task_dir.is_dir() {
        bail!("task bundle {} does not exist", task_dir.display());
    }
    let task = bench::load_bundle(task_dir)
        .map_err(|reason| anyhow::anyhow!("malformed bundle {}: {reason}", task_dir.display()))?;
    let index = load_index(config, &config.library)?;
    let gateway = config.gateway(Some(&task.task_id))?;
    let env = run_env(config);
    let result = run_workflow(&task, &config.workflow, &gateway, &index, &env)
        .map_err(|failure| anyhow::anyhow!("{failure}"))?;
    println!(
        "score={} round={} converged={}",
        result.best_score, result.best_round, result.converged
    );
    for path in &result.final_output_paths {
        println!("output={}", path.display());
    }
    println!(
        "result={}",
        env.runs_root
            .join(&task.task_id)
            .join("result.json")
            .display()
    );
    Ok(())
}

fn cmd_suite(config: &EngineConfig, root: &Path) -> Result<()> {
    if !root.is_dir() {
        bail!("suite root {} does not exist", root.display());
    }
    let index = load_index(config, &config.library)?;
    let env = run_env(config);
    let report = bench::run_suite(
        root,
        &config.workflow,
        |task| config.gateway(Some(&task.task_id)),
        &index,
        &env,
        config.parallel,
    )?;
    print!("{}", bench::render_table(&report));
    println!("report={}", env.runs_root.join("report.json").display());
    Ok(())
}

fn cmd_index(config: &EngineConfig, manifest: &Path) -> Result<()> {
    let index = load_index(config, manifest)?;
    for warning in index.warnings() {
        eprintln!("warning: {warning}");
    }
    let files = index_paths(manifest);
    println!(
        "indexed {} operators (dimension {}, backend {})",
        index.len(),
        index.dimension(),
        index.backend_id()
    );
    println!("index={}", files.metadata.display());
    println!("vectors={}", files.vectors.display());
    Ok(())
}

fn cmd_retrieve(config: &EngineConfig, query: &str) -> Result<()> {
    let index = load_index(config, &config.library)?;
    let gateway = config.gateway(None)?;
    let w = &config.workflow;
    let hits = retrieve_single(query, &index, w.top_k, w.sim_threshold, &gateway)?;
    let out = json!({
        "query": query,
        "top_k": w.top_k,
        "sim_threshold": w.sim_threshold,
        "results": hits
            .iter()
            .map(|h| json!({"id": h.id, "similarity": h.similarity}))
            .collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_report(path: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let report: SuiteReport = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a suite report", path.display()))?;
    print!("{}", bench::render_table(&report));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Report { report } = &cli.command {
        return cmd_report(report);
    }
    let config = cli.flags.resolve()?;
    match &cli.command {
        Command::Run { task_dir } => cmd_run(&config, task_dir),
        Command::Suite { root } => cmd_suite(&config, root),
        Command::Index { manifest } => {
            cmd_index(&config, manifest.as_deref().unwrap_or(&config.library))
        }
        Command::Retrieve { query } => cmd_retrieve(&config, query),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
