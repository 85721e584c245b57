//! Config-driven text-to-SQL workflows.
//!
//! The crate is organised the same way a run flows:
//!
//! - [`data`]: unified schema and question records, dataset/schema ingestion and
//!   the column-level schema decomposition.
//! - [`retrieval`]: hashing embedder, cosine top-k index, chain-of-thought prompt
//!   assembly and external-context extraction.
//! - [`llm`]: chat backends (OpenAI-compatible HTTP, scripted mock), retry policy
//!   and token/latency accounting.
//! - [`actors`]: the seven atomic actors, the shared [`actors::WorkflowState`]
//!   blackboard, and `Pipeline`/`Tree` composition.
//! - [`eval`]: read-only SQL execution, execution-accuracy comparison and
//!   schema-linking recall/precision.
//! - [`task`]: task containers and the concurrent per-instance runner.
//! - [`engine`]: root configuration, the engine driving tasks, and run reports.

pub mod actors;
pub mod clock;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod llm;
pub mod retrieval;
pub mod task;

pub use actors::{ActorKind, ActorSpec, MergePolicy, WorkflowState};
pub use clock::{Clock, FrozenClock, SystemClock};
pub use data::{ColumnRef, ColumnUnit, DatabaseSchema, Dataset, Exemplar, ForeignKey, QueryInstance};
pub use engine::{Engine, RootConfig, RunReport};
pub use error::{Error, Result};
pub use eval::{Cell, ExecOutcome, ResultTable, SchemaElementSet};
pub use llm::{BackendConfig, ChatBackend, ChatRequest, ChatResponse, UsageLedger};
pub use task::{TaskContainer, TaskResult, TaskSpec};
