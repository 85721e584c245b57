//! Root configuration, the engine that binds and runs tasks, and run reports.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::actors::{ActorContext, Templates};
use crate::clock::{Clock, SystemClock};
use crate::data::load_exemplars;
use crate::error::{Error, Result};
use crate::eval::{execution_accuracy, extract_schema_elements, linking_recall_precision, EvalPair, ExecOutcome, SchemaElementSet, SqlExecutor};
use crate::llm::{ChatBackend, UsageLedger};
use crate::retrieval::{Embedder, HashingEmbedder};
use crate::task::{
    bind_task, load_results, mark_failed, persist_results, run_task, Registries, TaskContainer, TaskResult, TokenCount,
    DEFAULT_CONCURRENCY, EXECUTE_ACCURACY, LINKING_RECALL_PRECISION,
};

pub use config::{
    load_config, load_config_with, parse_config, DatabaseConfig, DatasetConfig, EngineConfig, LlmConfig, Overrides,
    RootConfig, TaskConfig, UnknownKeys, MOCK_PROVIDER,
};
pub use report::{strip_timing, MetricValue, RunReport, RunTiming, TaskReport, TaskTiming, REPORT_FILE, REPORT_SCHEMA_VERSION};

/// Tasks in flight at once unless configured otherwise.
pub const DEFAULT_TASK_CONCURRENCY: usize = 2;

const USAGE_FILE: &str = "usage.json";

/// Usage and wall time of one task, stored next to its results so a report
/// can be rebuilt from disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct TaskUsage {
    ledger: UsageLedger,
    timing: UsageTiming,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct UsageTiming {
    wall_time: f64,
}

#[derive(Debug, Clone)]
struct TaskRun {
    container: TaskContainer,
    results: Vec<TaskResult>,
    ledger: UsageLedger,
    wall_time: f64,
    error: Option<String>,
}

pub struct Engine {
    config: RootConfig,
    registries: Registries,
    clock: Arc<dyn Clock>,
    backend: Option<Arc<dyn ChatBackend>>,
    embedder: Arc<dyn Embedder>,
    executor: Arc<SqlExecutor>,
    runs: Vec<TaskRun>,
    started_at: Option<String>,
}

impl Engine {
    pub fn new(config: RootConfig) -> Result<Self> {
        config.validate()?;
        let registries = Registries::new(config.benchmark_root());
        Ok(Self {
            config,
            registries,
            clock: Arc::new(SystemClock::new()),
            backend: None,
            embedder: Arc::new(HashingEmbedder::default()),
            executor: Arc::new(SqlExecutor::default()),
            runs: Vec::new(),
            started_at: None,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(load_config(&path.to_string_lossy())?)
    }

    /// Uses `backend` instead of the one the config describes.
    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_registries(mut self, registries: Registries) -> Self {
        self.registries = registries;
        self
    }

    pub fn registries_mut(&mut self) -> &mut Registries {
        &mut self.registries
    }

    pub fn config(&self) -> &RootConfig {
        &self.config
    }

    pub fn report_dir(&self) -> PathBuf {
        self.config.report_dir()
    }

    /// Binds every `exec_process` task, in order. Any failure aborts.
    pub fn bind(&self) -> Result<Vec<TaskContainer>> {
        self.config
            .exec_tasks()
            .into_iter()
            .map(|spec| {
                let c = bind_task(spec, &self.registries)?;
                log::info!(
                    "[{}] bound {} instances, workflow `{}` ({} actors)",
                    spec.task_id,
                    c.dataset.len(),
                    c.workflow.name,
                    c.workflow.size()
                );
                Ok(c)
            })
            .collect()
    }

    fn context(&self) -> Result<ActorContext> {
        let backend = match &self.backend {
            Some(b) => b.clone(),
            None => self.config.build_backend()?,
        };
        let mut ctx = ActorContext::new(backend)
            .with_clock(self.clock.clone())
            .with_embedder(self.embedder.clone())
            .with_executor(self.executor.clone());
        if let Some(dir) = &self.config.engine.templates_dir {
            ctx = ctx.with_templates(Templates::from_dir(&self.config.resolve_path(dir))?);
        }
        if let Some(path) = &self.config.engine.exemplars {
            ctx = ctx.with_exemplars(&load_exemplars(&self.config.resolve_path(path))?)?;
        }
        Ok(ctx)
    }

    fn task_limit(&self, container: &TaskContainer) -> usize {
        container
            .spec
            .meta_usize("concurrency")
            .or(self.config.engine.concurrency)
            .unwrap_or(DEFAULT_CONCURRENCY)
    }

    /// Binds all tasks, then runs them in `exec_process` order, overlapping up
    /// to the task concurrency cap. Results are persisted per task.
    pub fn execute(&mut self) -> Result<Vec<(String, Vec<TaskResult>)>> {
        self.started_at = Some(self.clock.timestamp());
        let containers = self.bind()?;
        let ctx = self.context()?;
        let report_dir = self.report_dir();
        let task_slots = if self.config.strict_sequential() {
            1
        } else {
            self.config.engine.task_concurrency.unwrap_or(DEFAULT_TASK_CONCURRENCY)
        };

        let slots: Vec<Mutex<Option<TaskRun>>> = containers.iter().map(|_| Mutex::new(None)).collect();
        let queue: Vec<Mutex<Option<TaskContainer>>> = containers.into_iter().map(|c| Mutex::new(Some(c))).collect();
        let next = AtomicUsize::new(0);
        let this = &*self;
        std::thread::scope(|scope| {
            for _ in 0..task_slots.min(queue.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = queue.get(i) else { break };
                    let Some(container) = cell.lock().unwrap_or_else(|p| p.into_inner()).take() else { continue };
                    let run = this.run_one(container, &ctx, &report_dir);
                    *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(run);
                });
            }
        });

        self.runs = slots.into_iter().filter_map(|s| s.into_inner().unwrap_or_else(|p| p.into_inner())).collect();
        Ok(self.runs.iter().map(|r| (r.container.spec.task_id.clone(), r.results.clone())).collect())
    }

    fn run_one(&self, mut container: TaskContainer, ctx: &ActorContext, report_dir: &Path) -> TaskRun {
        let task_id = container.spec.task_id.clone();
        let limit = self.task_limit(&container);
        log::info!("[{task_id}] running {} instances, limit {limit}", container.dataset.len());
        let start = self.clock.now();
        let outcome = run_task(&mut container, ctx, limit);
        let wall_time = (self.clock.now() - start).max(0.0);
        let ledger = container.ledger();
        let (results, mut error) = match outcome {
            Ok(r) => (r, None),
            Err(e) => {
                mark_failed(&mut container);
                (Vec::new(), Some(e.to_string()))
            }
        };
        if error.is_none() {
            let usage = TaskUsage { ledger, timing: UsageTiming { wall_time } };
            if let Err(e) = persist_results(report_dir, &task_id, &results).and_then(|dir| write_usage(&dir, &usage)) {
                mark_failed(&mut container);
                error = Some(e.to_string());
            }
        }
        match &error {
            Some(e) => log::error!("[{task_id}] failed: {e}"),
            None => log::info!(
                "[{task_id}] done: {}/{} ok, {} calls, {:.2}s",
                results.iter().filter(|r| r.is_ok()).count(),
                results.len(),
                ledger.total_calls,
                wall_time
            ),
        }
        TaskRun { container, results, ledger, wall_time, error }
    }

    /// Results of the last `execute`, keyed by task id.
    pub fn results(&self) -> BTreeMap<String, Vec<TaskResult>> {
        self.runs.iter().map(|r| (r.container.spec.task_id.clone(), r.results.clone())).collect()
    }

    pub fn ledger(&self, task_id: &str) -> Option<UsageLedger> {
        self.runs.iter().find(|r| r.container.spec.task_id == task_id).map(|r| r.ledger)
    }

    /// Computes every task's metrics from the last `execute` and writes
    /// `report.json`.
    pub fn evaluate(&self) -> Result<RunReport> {
        if self.runs.is_empty() && !self.config.engine.exec_process.is_empty() {
            return Err(Error::Precondition("evaluate called before execute".into()));
        }
        self.report(&self.runs, self.started_at.clone().unwrap_or_else(|| self.clock.timestamp()))
    }

    /// Rebuilds the report from results persisted by an earlier run.
    pub fn evaluate_persisted(&mut self) -> Result<RunReport> {
        let started = self.clock.timestamp();
        let report_dir = self.report_dir();
        let mut runs = Vec::new();
        for container in self.bind()? {
            let task_id = container.spec.task_id.clone();
            let (results, error) = match load_results(&report_dir, &task_id) {
                Ok(r) => (r, None),
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            let usage = read_usage(&report_dir.join(&task_id)).unwrap_or_else(|| TaskUsage {
                ledger: UsageLedger {
                    total_prompt_tokens: results.iter().map(|r| r.tokens.prompt).sum(),
                    total_completion_tokens: results.iter().map(|r| r.tokens.completion).sum(),
                    ..Default::default()
                },
                timing: UsageTiming::default(),
            });
            runs.push(TaskRun { container, results, ledger: usage.ledger, wall_time: usage.timing.wall_time, error });
        }
        self.runs = runs;
        self.report(&self.runs, started)
    }

    fn report(&self, runs: &[TaskRun], started_at: String) -> Result<RunReport> {
        let tasks = runs.iter().map(|r| self.task_report(r)).collect();
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_digest: self.config.digest()?,
            tasks,
            timing: RunTiming { started_at, finished_at: self.clock.timestamp() },
        };
        let path = report.write(&self.report_dir())?;
        log::info!("report written to {}", path.display());
        Ok(report)
    }

    fn task_report(&self, run: &TaskRun) -> TaskReport {
        let mut report = TaskReport {
            task_id: run.container.spec.task_id.clone(),
            instance_count: run.results.len(),
            succeeded: run.results.iter().filter(|r| r.is_ok()).count(),
            metrics: BTreeMap::new(),
            tokens: TokenCount::from(run.ledger),
            calls: run.ledger.total_calls,
            error: run.error.clone(),
            timing: TaskTiming { wall_time: run.wall_time, llm_latency: run.ledger.total_latency },
        };
        if report.error.is_none() {
            match compute_metrics(&run.container, &run.results, &self.executor) {
                Ok(m) => report.metrics = m,
                Err(e) => {
                    log::error!("[{}] evaluation failed: {e}", report.task_id);
                    report.error = Some(e.to_string());
                }
            }
        }
        report
    }
}

fn write_usage(dir: &Path, usage: &TaskUsage) -> Result<()> {
    let path = dir.join(USAGE_FILE);
    let text = serde_json::to_string_pretty(usage).map_err(|e| Error::json("usage", e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_usage(dir: &Path) -> Option<TaskUsage> {
    let text = std::fs::read_to_string(dir.join(USAGE_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Metrics named by the task's `eval_type`, computed over its results.
pub fn compute_metrics(
    container: &TaskContainer,
    results: &[TaskResult],
    executor: &SqlExecutor,
) -> Result<BTreeMap<String, MetricValue>> {
    let instances = &container.dataset.instances;
    if instances.len() != results.len() {
        return Err(Error::Evaluation(format!("{} results for {} instances", results.len(), instances.len())));
    }
    if let Some((i, r)) = instances.iter().zip(results).find(|(i, r)| i.instance_id != r.instance_id) {
        return Err(Error::Evaluation(format!("result `{}` does not line up with instance `{}`", r.instance_id, i.instance_id)));
    }
    let gold_sql = |i: &crate::data::QueryInstance| {
        i.gold_sql
            .clone()
            .ok_or_else(|| Error::Evaluation(format!("instance `{}` has no gold_sql", i.instance_id)))
    };

    let mut metrics = BTreeMap::new();
    for metric in &container.spec.eval_type {
        let value = match metric.as_str() {
            EXECUTE_ACCURACY => {
                let mut pairs = Vec::with_capacity(results.len());
                for (inst, res) in instances.iter().zip(results) {
                    let gold_sql = gold_sql(inst)?;
                    let db = container.db_path(&inst.db_id);
                    if !db.is_file() {
                        return Err(Error::Evaluation(format!("database not found: {}", db.display())));
                    }
                    let gold = executor.execute(&db, &gold_sql).map_err(|e| Error::Evaluation(e.to_string()))?;
                    let pred = match (&res.predicted_sql, &res.exec_outcome) {
                        (Some(_), Some(outcome)) => outcome.clone(),
                        (Some(sql), None) => executor.execute(&db, sql).unwrap_or_else(|e| ExecOutcome::error(e.to_string())),
                        (None, _) => ExecOutcome::error(res.error.clone().unwrap_or_default()),
                    };
                    pairs.push(EvalPair { pred, gold, gold_sql });
                }
                MetricValue::Scalar(execution_accuracy(&pairs).map_err(|e| Error::Evaluation(e.to_string()))?)
            }
            LINKING_RECALL_PRECISION => {
                let columns_only = container.spec.meta_bool("columns_only");
                let (mut recall, mut precision) = (0.0, 0.0);
                for (inst, res) in instances.iter().zip(results) {
                    let schema = container
                        .schema(&inst.db_id)
                        .ok_or_else(|| Error::Evaluation(format!("no schema for `{}`", inst.db_id)))?;
                    let mut gold: SchemaElementSet = match &inst.gold_schema_elements {
                        Some(els) => els.iter().collect(),
                        None => extract_schema_elements(&gold_sql(inst)?, schema),
                    };
                    let mut pred: SchemaElementSet = match (&res.linked_elements, &res.predicted_sql) {
                        (Some(els), _) => els.iter().collect(),
                        (None, Some(sql)) => extract_schema_elements(sql, schema),
                        (None, None) => SchemaElementSet::new(),
                    };
                    if columns_only {
                        gold = gold.columns_only();
                        pred = pred.columns_only();
                    }
                    let (r, p) = linking_recall_precision(&pred, &gold)
                        .map_err(|e| Error::Evaluation(format!("instance `{}`: {e}", inst.instance_id)))?;
                    recall += r;
                    precision += p;
                }
                if instances.is_empty() {
                    return Err(Error::Evaluation("linking metrics over an empty dataset".into()));
                }
                let n = instances.len() as f64;
                MetricValue::RecallPrecision { recall: recall / n, precision: precision / n }
            }
            other => return Err(Error::Evaluation(format!("unknown metric `{other}`"))),
        };
        metrics.insert(metric.clone(), value);
    }
    Ok(metrics)
}
