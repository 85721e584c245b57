//! Task containers: a dataset, its schemas and a workflow bound together, and
//! the runner that pushes every instance through the workflow.

mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::actors::{run_actor, ActorContext, ActorKind, ActorSpec, WorkflowState};
use crate::data::{DatabaseSchema, Dataset, QueryInstance};
use crate::error::{Error, Result};
use crate::eval::ExecOutcome;
use crate::llm::{RecordingBackend, SharedLedger, UsageLedger};
use crate::retrieval::extract_context_response;

pub use registry::{db_path, Registries, GENERATE_TASK};

pub const EXECUTE_ACCURACY: &str = "execute_accuracy";
pub const LINKING_RECALL_PRECISION: &str = "linking_recall_precision";
pub const METRICS: [&str; 2] = [EXECUTE_ACCURACY, LINKING_RECALL_PRECISION];

pub const DEFAULT_CONCURRENCY: usize = 4;

/// One entry of `task.task_meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub task_type: String,
    pub data_source: String,
    pub schema_source: String,
    #[serde(default)]
    pub eval_type: Vec<String>,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, data_source: impl Into<String>, schema_source: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            task_type: GENERATE_TASK.into(),
            data_source: data_source.into(),
            schema_source: schema_source.into(),
            eval_type: Vec::new(),
            meta: Map::new(),
        }
    }

    pub fn with_eval(mut self, metrics: &[&str]) -> Self {
        self.eval_type = metrics.iter().map(|m| m.to_string()).collect();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Looks `key` up in `meta`, then in `meta.task`.
    pub fn meta_value(&self, key: &str) -> Option<&Value> {
        self.meta
            .get(key)
            .or_else(|| self.meta.get("task").and_then(Value::as_object).and_then(|t| t.get(key)))
    }

    pub fn meta_bool(&self, key: &str) -> bool {
        self.meta_value(key).and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta_value(key).and_then(Value::as_u64).map(|n| n as usize)
    }

    /// Checks the fields that need no registry: id, metric names.
    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(Error::binding("task_id", "must not be empty"));
        }
        if let Some(bad) = self.eval_type.iter().find(|m| !METRICS.contains(&m.as_str())) {
            return Err(Error::binding(
                "eval_type",
                format!("unknown metric `{bad}` (expected one of {})", METRICS.join(", ")),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenCount {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

impl From<UsageLedger> for TokenCount {
    fn from(l: UsageLedger) -> Self {
        Self { prompt: l.total_prompt_tokens, completion: l.total_completion_tokens }
    }
}

/// Outcome for one instance. Exactly one of `predicted_sql` and `error` is
/// set. The duration is serialized under `timing` so timing-free comparisons
/// can drop that one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_outcome: Option<ExecOutcome>,
    pub tokens: TokenCount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linked_elements: Option<BTreeSet<String>>,
    #[serde(rename = "timing", with = "timing")]
    pub duration: f64,
}

mod timing {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Timing {
        duration: f64,
    }

    pub fn serialize<S: Serializer>(d: &f64, s: S) -> Result<S::Ok, S::Error> {
        Timing { duration: *d }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Timing::deserialize(d).map(|t| t.duration)
    }
}

impl TaskResult {
    pub fn success(instance_id: impl Into<String>, sql: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            predicted_sql: Some(sql.into()),
            error: None,
            exec_outcome: None,
            tokens: TokenCount::default(),
            linked_elements: None,
            duration: 0.0,
        }
    }

    pub fn failure(instance_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            predicted_sql: None,
            error: Some(error.into()),
            exec_outcome: None,
            tokens: TokenCount::default(),
            linked_elements: None,
            duration: 0.0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.predicted_sql.is_some()
    }

    /// The same result with its timing zeroed.
    pub fn without_timing(&self) -> Self {
        Self { duration: 0.0, ..self.clone() }
    }
}

/// A task ready to run: everything it names has been resolved.
#[derive(Debug, Clone)]
pub struct TaskContainer {
    pub spec: TaskSpec,
    pub dataset: Arc<Dataset>,
    pub schemas: Arc<BTreeMap<String, Arc<DatabaseSchema>>>,
    pub workflow: ActorSpec,
    pub db_root: PathBuf,
    status: TaskStatus,
    results: Vec<TaskResult>,
    ledger: UsageLedger,
}

impl TaskContainer {
    pub fn status(&self) -> TaskStatus {
        self.status
    }

    pub fn results(&self) -> &[TaskResult] {
        &self.results
    }

    pub fn into_results(self) -> Vec<TaskResult> {
        self.results
    }

    /// Usage recorded across every call the task made.
    pub fn ledger(&self) -> UsageLedger {
        self.ledger
    }

    pub fn db_path(&self, db_id: &str) -> PathBuf {
        db_path(&self.db_root, db_id)
    }

    pub fn schema(&self, db_id: &str) -> Option<&Arc<DatabaseSchema>> {
        self.schemas.get(db_id)
    }

    fn transition(&mut self, to: TaskStatus) -> Result<()> {
        let ok = matches!(
            (self.status, to),
            (TaskStatus::Pending, TaskStatus::Running)
                | (TaskStatus::Running, TaskStatus::Done)
                | (TaskStatus::Running, TaskStatus::Failed)
        );
        if !ok {
            return Err(Error::Precondition(format!(
                "task `{}` cannot go from {:?} to {:?}",
                self.spec.task_id, self.status, to
            )));
        }
        self.status = to;
        Ok(())
    }
}

/// The workflow a task asks for: `meta.workflow` (any workflow encoding), else
/// the actor named by `meta.generate_type`. Both may also sit under
/// `meta.task`.
pub fn resolve_workflow(spec: &TaskSpec, registries: &Registries) -> Result<ActorSpec> {
    let as_binding = |e: Error| match e {
        e @ Error::Binding { .. } => e,
        other => Error::binding("meta", other.to_string()),
    };
    if let Some(encoding) = spec.meta_value("workflow") {
        return registries.actors.parse_workflow(encoding).map_err(as_binding);
    }
    match spec.meta_value("generate_type") {
        Some(Value::String(name)) => {
            let actor = registries.actors.lookup(name).map_err(as_binding)?;
            if actor.kind != ActorKind::Generate {
                return Err(Error::binding("meta", format!("generate_type `{name}` is a {} actor", actor.kind)));
            }
            Ok(actor)
        }
        Some(other) => Err(Error::binding("meta", format!("generate_type must be a string, got {other}"))),
        None => Err(Error::binding("meta", "needs a `workflow` or `generate_type` entry")),
    }
}

/// Resolves a task's sources and workflow. Every lookup failure surfaces here
/// as a binding error naming the offending field.
pub fn bind_task(spec: &TaskSpec, registries: &Registries) -> Result<TaskContainer> {
    spec.validate()?;
    if !registries.knows_task_type(&spec.task_type) {
        return Err(Error::binding("task_type", format!("unknown task type `{}`", spec.task_type)));
    }
    let workflow = resolve_workflow(spec, registries)?;
    let dataset = registries.resolve_dataset(&spec.data_source)?;
    let schemas: BTreeMap<String, Arc<DatabaseSchema>> = registries
        .resolve_schemas(&spec.schema_source)?
        .into_iter()
        .map(|s| (s.db_id.clone(), Arc::new(s)))
        .collect();
    if let Some(orphan) = dataset.instances.iter().find(|i| !schemas.contains_key(&i.db_id)) {
        return Err(Error::binding(
            "schema_source",
            format!("`{}` has no schema for db_id `{}` (instance {})", spec.schema_source, orphan.db_id, orphan.instance_id),
        ));
    }
    Ok(TaskContainer {
        spec: spec.clone(),
        dataset: Arc::new(dataset),
        schemas: Arc::new(schemas),
        workflow,
        db_root: registries.db_root(&spec.schema_source),
        status: TaskStatus::Pending,
        results: Vec::new(),
        ledger: UsageLedger::default(),
    })
}

/// Runs every instance through the container's workflow with at most `limit`
/// instances in flight. Results come back in dataset order; an instance that
/// fails records its error and the rest carry on.
pub fn run_task(container: &mut TaskContainer, ctx: &ActorContext, limit: usize) -> Result<Vec<TaskResult>> {
    if limit == 0 {
        return Err(Error::Argument("concurrency limit must be positive".into()));
    }
    container.transition(TaskStatus::Running)?;

    let task_ledger = Arc::new(SharedLedger::new());
    let task_backend: Arc<dyn crate::llm::ChatBackend> =
        Arc::new(RecordingBackend::new(ctx.backend.clone(), task_ledger.clone()));
    let task_ctx = ctx.clone().with_backend(task_backend);

    let instances = &container.dataset.instances;
    let slots: Vec<Mutex<Option<TaskResult>>> = instances.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let shared: &TaskContainer = container;

    std::thread::scope(|scope| {
        for _ in 0..limit.min(instances.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(instance) = instances.get(i) else { break };
                let result = catch_unwind(AssertUnwindSafe(|| run_instance(shared, instance, &task_ctx)))
                    .unwrap_or_else(|panic| {
                        let msg = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "unknown panic".into());
                        TaskResult::failure(&instance.instance_id, format!("instance panicked: {msg}"))
                    });
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
            });
        }
    });

    let results: Vec<TaskResult> = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap_or_else(|p| p.into_inner()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Precondition("an instance slot was left empty".into()))?;
    container.ledger = task_ledger.snapshot();
    container.results = results.clone();
    container.transition(TaskStatus::Done)?;
    Ok(results)
}

/// Marks a running or pending container as failed (container-level I/O).
pub fn mark_failed(container: &mut TaskContainer) {
    if container.status == TaskStatus::Pending {
        container.status = TaskStatus::Running;
    }
    if container.status == TaskStatus::Running {
        container.status = TaskStatus::Failed;
    }
}

fn run_instance(container: &TaskContainer, instance: &QueryInstance, task_ctx: &ActorContext) -> TaskResult {
    let ledger = Arc::new(SharedLedger::new());
    let backend = Arc::new(RecordingBackend::new(task_ctx.backend.clone(), ledger.clone()));
    let db_path = container.db_path(&instance.db_id);
    let ctx = task_ctx.clone().with_backend(backend).with_db_path(&db_path);
    let start = ctx.clock.now();

    let outcome = instance_outcome(container, instance, &ctx, &db_path);
    let mut result = match outcome {
        Ok((sql, linked, exec)) => TaskResult {
            exec_outcome: exec,
            linked_elements: linked,
            ..TaskResult::success(&instance.instance_id, sql)
        },
        Err(e) => TaskResult::failure(&instance.instance_id, e.to_string()),
    };
    result.tokens = ledger.snapshot().into();
    result.duration = (ctx.clock.now() - start).max(0.0);
    if let Some(e) = &result.error {
        log::warn!("[{}] instance {} failed: {e}", container.spec.task_id, instance.instance_id);
    }
    result
}

type InstanceOutput = (String, Option<BTreeSet<String>>, Option<ExecOutcome>);

fn instance_outcome(
    container: &TaskContainer,
    instance: &QueryInstance,
    ctx: &ActorContext,
    db_path: &Path,
) -> Result<InstanceOutput> {
    let schema = container
        .schema(&instance.db_id)
        .ok_or_else(|| Error::Precondition(format!("no schema for db_id `{}`", instance.db_id)))?;
    let mut state = WorkflowState::for_instance(instance, schema.clone());
    if container.spec.meta_bool("extract_context") {
        if let Some(doc) = &instance.external_context {
            let reply = extract_context_response(std::slice::from_ref(doc), &instance.question, ctx.backend.as_ref())?;
            state.context = Some(reply.text);
        }
    }
    let done = run_actor(&container.workflow, &state, ctx)?;
    let sql = done
        .final_sql
        .clone()
        .ok_or_else(|| Error::Precondition("workflow finished without a final SQL".into()))?;
    let exec = if db_path.is_file() {
        Some(ctx.executor.execute(db_path, &sql).unwrap_or_else(|e| ExecOutcome::error(e.to_string())))
    } else {
        None
    };
    Ok((sql, done.linked_elements, exec))
}

/// `results.jsonl` and `pred.sql` under `{report_dir}/{task_id}/`.
pub fn persist_results(report_dir: &Path, task_id: &str, results: &[TaskResult]) -> Result<PathBuf> {
    let dir = report_dir.join(task_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut jsonl = String::new();
    let mut pred = String::new();
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| Error::json("task result", e))?;
        jsonl.push_str(&line);
        jsonl.push('\n');
        let sql = r.predicted_sql.as_deref().unwrap_or("");
        let _ = writeln!(pred, "{}", sql.split_whitespace().collect::<Vec<_>>().join(" "));
    }
    let results_path = dir.join("results.jsonl");
    std::fs::write(&results_path, jsonl).map_err(|e| Error::io(&results_path, e))?;
    let pred_path = dir.join("pred.sql");
    std::fs::write(&pred_path, pred).map_err(|e| Error::io(&pred_path, e))?;
    Ok(dir)
}

pub fn load_results(report_dir: &Path, task_id: &str) -> Result<Vec<TaskResult>> {
    let path = report_dir.join(task_id).join("results.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{} line {}", path.display(), n + 1), e)))
        .collect()
}
