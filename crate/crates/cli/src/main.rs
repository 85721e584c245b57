use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sqlactors::engine::{load_config, Engine, Overrides, RunReport};
use sqlactors::task::{resolve_workflow, Registries};
use sqlactors::RootConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Execute every task, then evaluate and write the report.
    Run,
    /// Recompute metrics from results persisted by an earlier run.
    Evaluate,
    /// Parse and check the config only.
    Validate,
}

/// Run text-to-SQL workflows described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "sqlactors", version)]
struct Cli {
    /// Path to the JSON config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "run")]
    mode: Mode,
    /// Overrides `engine.report_dir`.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Per-task instance concurrency; overrides `engine.concurrency`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<(), String> {
    let source = cli.config.to_str().ok_or("config path is not valid UTF-8")?;
    let overrides = Overrides {
        report_dir: cli.report_dir.clone(),
        concurrency: cli.concurrency.map(|c| c as usize),
        ..Default::default()
    };
    let config = load_config(source)
        .and_then(|c| c.with_overrides(&overrides, &Overrides::default()))
        .map_err(|e| e.to_string())?;

    match cli.mode {
        Mode::Validate => validate(&config),
        Mode::Run => {
            let mut engine = Engine::new(config).map_err(|e| e.to_string())?;
            engine.execute().map_err(|e| e.to_string())?;
            let report = engine.evaluate().map_err(|e| e.to_string())?;
            finish(&report)
        }
        Mode::Evaluate => {
            let mut engine = Engine::new(config).map_err(|e| e.to_string())?;
            let report = engine.evaluate_persisted().map_err(|e| e.to_string())?;
            finish(&report)
        }
    }
}

/// Checks that every scheduled task names a known type and a workflow that
/// parses. Touches neither the network nor any database.
fn validate(config: &RootConfig) -> Result<(), String> {
    let registries = Registries::new(config.benchmark_root());
    for spec in config.exec_tasks() {
        if !registries.knows_task_type(&spec.task_type) {
            return Err(format!("task {}: unknown task_type {:?}", spec.task_id, spec.task_type));
        }
        let workflow = resolve_workflow(spec, &registries).map_err(|e| format!("task {}: {e}", spec.task_id))?;
        log::info!("[{}] workflow {}", spec.task_id, workflow.name);
    }
    println!("config ok: {} task(s) scheduled", config.engine.exec_process.len());
    Ok(())
}

fn finish(report: &RunReport) -> Result<(), String> {
    print!("{}", report.summary());
    let failed: Vec<&str> = report.tasks.iter().filter(|t| t.error.is_some()).map(|t| t.task_id.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("task(s) failed: {}", failed.join(", ")))
    }
}
