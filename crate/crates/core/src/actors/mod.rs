//! Actors and their composition.
//!
//! Every actor maps a [`WorkflowState`] to a new one. The seven atomic kinds
//! each fill a particular part of the state; `Pipeline` threads the state
//! through its children in order and `Tree` runs every child on the same
//! input and folds the results with a [`MergePolicy`].

mod atomic;
mod merge;
mod registry;
mod spec;
mod state;
mod templates;
pub mod text;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::clock::{Clock, SystemClock};
use crate::data::Exemplar;
use crate::error::{Error, Result};
use crate::eval::SqlExecutor;
use crate::llm::ChatBackend;
use crate::retrieval::{Embedder, HashingEmbedder, Payload, VectorIndex};

pub use atomic::{decompose, generate, optimize, parse, reduce, scale, select};
pub use merge::{MergePolicy, ScalarRule, SeqRule, SetRule};
pub use registry::{parse_workflow, ActorRegistry};
pub use spec::{compose_pipeline, compose_tree, ActorKind, ActorSpec};
pub use state::{FeedbackEntry, SubQuestion, TraceEntry, WorkflowState};
pub use templates::{render, Templates};

/// Default character budget for assembled CoT prompts.
pub const DEFAULT_PROMPT_BUDGET: usize = 8_000;

/// Everything an actor needs besides the state: the model, a clock, retrieval
/// indexes, prompt templates and the instance's database.
#[derive(Clone)]
pub struct ActorContext {
    pub backend: Arc<dyn ChatBackend>,
    pub clock: Arc<dyn Clock>,
    pub embedder: Arc<dyn Embedder>,
    pub exemplars: Option<Arc<VectorIndex>>,
    pub templates: Arc<Templates>,
    pub executor: Arc<SqlExecutor>,
    pub db_path: Option<PathBuf>,
    pub prompt_budget: usize,
    column_indexes: Arc<Mutex<HashMap<String, Arc<VectorIndex>>>>,
}

impl ActorContext {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            clock: Arc::new(SystemClock::new()),
            embedder: Arc::new(HashingEmbedder::default()),
            exemplars: None,
            templates: Arc::new(Templates::builtin()),
            executor: Arc::new(SqlExecutor::default()),
            db_path: None,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            column_indexes: Arc::default(),
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self.column_indexes = Arc::default();
        self
    }

    /// Indexes `exemplars` with the context's embedder.
    pub fn with_exemplars(mut self, exemplars: &[Exemplar]) -> Result<Self> {
        self.exemplars = Some(Arc::new(VectorIndex::from_exemplars(exemplars, self.embedder.as_ref())?));
        Ok(self)
    }

    pub fn with_exemplar_index(mut self, index: Arc<VectorIndex>) -> Self {
        self.exemplars = Some(index);
        self
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_executor(mut self, executor: Arc<SqlExecutor>) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_db_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.db_path = Some(path.into());
        self
    }

    pub fn without_db_path(mut self) -> Self {
        self.db_path = None;
        self
    }

    /// Column index of the state's current schema. Indexes of full schemas are
    /// cached per database; reduced schemas are indexed on the fly.
    pub(crate) fn column_index(&self, state: &WorkflowState) -> Result<Arc<VectorIndex>> {
        if let Some(candidate) = &state.candidate_schema {
            return Ok(Arc::new(VectorIndex::from_schema(candidate, self.embedder.as_ref())?));
        }
        let mut cache = self.column_indexes.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(index) = cache.get(&state.db_id) {
            if index.len() == state.full_schema.columns.len() {
                return Ok(index.clone());
            }
        }
        let index = Arc::new(VectorIndex::from_schema(&state.full_schema, self.embedder.as_ref())?);
        cache.insert(state.db_id.clone(), index.clone());
        Ok(index)
    }

    /// Up to `k` stored exemplars nearest to `question`.
    pub(crate) fn nearest_exemplars(&self, question: &str, k: usize) -> Result<Vec<Exemplar>> {
        let Some(index) = &self.exemplars else { return Ok(Vec::new()) };
        if k == 0 || index.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(question)?;
        Ok(index
            .topk(&query, k)?
            .into_iter()
            .filter_map(|(id, _)| match index.payload(&id) {
                Some(Payload::Exemplar(ex)) => Some(ex.clone()),
                _ => None,
            })
            .collect())
    }
}

/// Runs `spec` on a copy of `state`. The input is never modified.
///
/// Failures inside an atomic actor come back as [`Error::Actor`] naming that
/// actor and carrying the state it was given.
pub fn run_actor(spec: &ActorSpec, state: &WorkflowState, ctx: &ActorContext) -> Result<WorkflowState> {
    match (spec.kind.is_composite(), spec.children.is_empty()) {
        (true, true) => return Err(Error::Config(format!("{} `{}` has no children", spec.kind, spec.name))),
        (false, false) => {
            return Err(Error::Config(format!("atomic actor `{}` ({}) cannot have children", spec.name, spec.kind)))
        }
        _ => {}
    }
    match spec.kind {
        ActorKind::Pipeline => {
            let mut current = state.clone();
            for child in &spec.children {
                current = run_actor(child, &current, ctx)?;
            }
            Ok(current)
        }
        ActorKind::Tree => {
            let policy = spec.merge_policy()?;
            let outputs = spec
                .children
                .iter()
                .map(|child| run_actor(child, state, ctx))
                .collect::<Result<Vec<_>>>()?;
            Ok(policy.merge(state, &outputs))
        }
        kind => {
            let result = match kind {
                ActorKind::Reduce => reduce(state, spec, ctx),
                ActorKind::Parse => parse(state, spec, ctx),
                ActorKind::Generate => generate(state, spec, ctx),
                ActorKind::Decompose => decompose(state, spec, ctx),
                ActorKind::Scale => scale(state, spec, ctx),
                ActorKind::Optimize => optimize(state, spec, ctx),
                ActorKind::Select => select(state, spec, ctx),
                ActorKind::Pipeline | ActorKind::Tree => unreachable!("composites handled above"),
            };
            result.map_err(|e| match e {
                e @ Error::Actor { .. } => e,
                other => Error::Actor {
                    actor: spec.name.clone(),
                    source: Box::new(other),
                    state: Some(Box::new(state.clone())),
                },
            })
        }
    }
}
