//! Fixtures shared by the integration tests: toy SQLite databases, their
//! schemas, and a scripted mock that answers every actor prompt.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rusqlite::Connection;
use sqlactors::actors::ActorContext;
use sqlactors::data::{ColumnRef, ColumnUnit, DatabaseSchema, ForeignKey};
use sqlactors::llm::MockBackend;
use sqlactors::FrozenClock;

pub const SHOP_SQL: &str = "
CREATE TABLE customers(id INTEGER PRIMARY KEY, name TEXT, city TEXT);
CREATE TABLE orders(id INTEGER PRIMARY KEY, customer_id INTEGER REFERENCES customers(id), total REAL, placed TEXT);
INSERT INTO customers VALUES (1,'Ada','Paris'),(2,'Bo','Oslo'),(3,'Cy','Paris'),(4,'Di',NULL);
INSERT INTO orders VALUES (1,1,10.5,'2024-01-02'),(2,1,20.0,'2024-02-03'),(3,2,7.25,'2024-02-10'),
  (4,3,NULL,'2024-03-01'),(5,3,0.1,'2024-03-04'),(6,3,0.2,'2024-03-05');
";

pub const SCHOOL_SQL: &str = "
CREATE TABLE students(id INTEGER PRIMARY KEY, name TEXT, year INTEGER);
CREATE TABLE courses(id INTEGER PRIMARY KEY, title TEXT, credits INTEGER);
CREATE TABLE enrollments(student_id INTEGER REFERENCES students(id), course_id INTEGER REFERENCES courses(id), grade REAL);
INSERT INTO students VALUES (1,'Eve',1),(2,'Fay',2),(3,'Gus',2),(4,'Hal',3);
INSERT INTO courses VALUES (1,'Algebra',3),(2,'Biology',4),(3,'Chemistry',4);
INSERT INTO enrollments VALUES (1,1,3.5),(1,2,4.0),(2,1,2.5),(3,3,NULL),(4,2,3.0),(4,3,3.25);
";

pub const WEATHER_SQL: &str = "
CREATE TABLE stations(code TEXT PRIMARY KEY, city TEXT, elevation REAL);
CREATE TABLE readings(station TEXT REFERENCES stations(code), day INTEGER, temp REAL, rain REAL);
INSERT INTO stations VALUES ('A1','Lima',154.0),('B2','Quito',2850.0),('C3','Oslo',NULL);
INSERT INTO readings VALUES ('A1',1,20.1,0.0),('A1',2,21.3,NULL),('B2',1,13.0,2.5),('B2',2,12.4,0.0000001),
  ('C3',1,-3.5,1.2),('C3',2,-4.0,NULL);
";

/// Creates `{root}/{db_id}/{db_id}.sqlite` from `sql`.
pub fn make_db(root: &Path, db_id: &str, sql: &str) -> PathBuf {
    let dir = root.join(db_id);
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(format!("{db_id}.sqlite"));
    let _ = std::fs::remove_file(&path);
    Connection::open(&path).unwrap().execute_batch(sql).unwrap();
    path
}

/// Reads the schema of a SQLite file.
pub fn introspect(path: &Path, db_id: &str) -> DatabaseSchema {
    let conn = Connection::open(path).unwrap();
    let tables: Vec<String> = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY rowid")
        .unwrap()
        .query_map([], |r| r.get(0))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    let mut columns = Vec::new();
    let mut fks = Vec::new();
    for t in &tables {
        let cols: Vec<(String, String, i64)> = conn
            .prepare(&format!("PRAGMA table_info({t})"))
            .unwrap()
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        let refs: Vec<(String, String, String)> = conn
            .prepare(&format!("PRAGMA foreign_key_list({t})"))
            .unwrap()
            .query_map([], |r| Ok((r.get(3)?, r.get(2)?, r.get(4)?)))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        for (name, ty, pk) in cols {
            let mut unit = ColumnUnit::new(db_id, t, &name, ty);
            if pk > 0 {
                unit = unit.primary_key();
            }
            if let Some((_, to_table, to_col)) = refs.iter().find(|(from, _, _)| *from == name) {
                unit.foreign_key_ref = Some(ColumnRef::new(to_table, to_col));
                fks.push(ForeignKey { from: ColumnRef::new(t, &name), to: ColumnRef::new(to_table, to_col) });
            }
            columns.push(unit);
        }
    }
    DatabaseSchema::new(db_id, columns, fks).unwrap()
}

/// The three toy databases under `root`, with their schemas.
pub fn toy_databases(root: &Path) -> Vec<(PathBuf, DatabaseSchema)> {
    [("shop", SHOP_SQL), ("school", SCHOOL_SQL), ("weather", WEATHER_SQL)]
        .iter()
        .map(|(id, sql)| {
            let path = make_db(root, id, sql);
            let schema = introspect(&path, id);
            (path, schema)
        })
        .collect()
}

pub const CANDIDATES: [&str; 3] = [
    "SELECT name FROM customers WHERE city = 'Paris'",
    "SELECT name FROM customers WHERE city = 'Paris' ORDER BY id",
    "SELECT DISTINCT name FROM customers WHERE city = 'Paris'",
];

/// Scripted answers for every built-in prompt over the shop database.
pub fn shop_mock() -> MockBackend {
    let fence = |sql: &str| format!("```sql\n{sql}\n```");
    MockBackend::new()
        .rule(&["Identify the tables and columns"], "customers.name, customers.city")
        .rule(&["List the ones needed"], "customers.name\ncustomers.city")
        .rule(&["Break the question into"], "1. Which customers live in Paris?\n2. What are their names?")
        .rule(&["Candidate 1 of"], fence(CANDIDATES[0]).as_str())
        .rule(&["Candidate 2 of"], fence(CANDIDATES[1]).as_str())
        .rule(&["Candidate 3 of"], fence(CANDIDATES[2]).as_str())
        .rule(&["Reply with the number"], "2")
        .rule(&["corrected SQLite query"], fence("SELECT name FROM customers WHERE city = 'Paris'").as_str())
        .rule(&["Sub-question: What are their names?"], fence(CANDIDATES[0]).as_str())
        .rule(&["Sub-question: Which customers"], fence("SELECT id FROM customers WHERE city = 'Paris'").as_str())
        .fallback(fence("SELECT name FROM customers WHERE city = 'Paris'").as_str())
}

pub fn frozen_ctx(backend: MockBackend) -> ActorContext {
    ActorContext::new(Arc::new(backend)).with_clock(Arc::new(FrozenClock::new()))
}

pub mod laws {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use rand::Rng;
    use sqlactors::actors::{run_actor, ActorContext, ActorKind, ActorSpec, WorkflowState};
    use sqlactors::{DatabaseSchema, Result};

    pub fn composite(kind: ActorKind, name: &str, children: Vec<ActorSpec>) -> ActorSpec {
        ActorSpec { kind, name: name.to_owned(), params: Default::default(), children }
    }

    fn random_atomic(rng: &mut impl Rng, counter: &mut usize) -> ActorSpec {
        *counter += 1;
        let kind = ActorKind::ATOMIC[rng.random_range(0..ActorKind::ATOMIC.len())];
        let spec = ActorSpec::atomic(kind, format!("{kind}{counter}"));
        match kind {
            ActorKind::Reduce => spec.with_param("k", rng.random_range(2..6u64)),
            ActorKind::Scale => spec.with_param("n_candidates", rng.random_range(1..4u64)),
            ActorKind::Optimize => spec.with_param("max_iters", rng.random_range(1..3u64)),
            _ => spec,
        }
    }

    fn random_node(rng: &mut impl Rng, depth: usize, counter: &mut usize) -> ActorSpec {
        if depth <= 1 || rng.random_bool(0.35) {
            return random_atomic(rng, counter);
        }
        let kind = if rng.random_bool(0.5) { ActorKind::Pipeline } else { ActorKind::Tree };
        let n = rng.random_range(1..=3);
        let children = (0..n).map(|_| random_node(rng, depth - 1, counter)).collect();
        *counter += 1;
        composite(kind, &format!("{kind}{counter}"), children)
    }

    /// A random workflow of depth at most `max_depth` (an atomic actor has
    /// depth 1). Names are unique.
    pub fn random_workflow(rng: &mut impl Rng, max_depth: usize) -> ActorSpec {
        let mut counter = 0;
        random_node(rng, max_depth, &mut counter)
    }

    /// Random workflow whose root is the given composite kind.
    pub fn random_rooted(rng: &mut impl Rng, kind: ActorKind, max_depth: usize) -> ActorSpec {
        let mut counter = 0;
        let n = rng.random_range(2..=3);
        let children = (0..n).map(|_| random_node(rng, max_depth - 1, &mut counter)).collect();
        composite(kind, "Root", children)
    }

    /// Inlines every Pipeline child of a Pipeline, recursively.
    pub fn flatten(spec: &ActorSpec) -> ActorSpec {
        let children: Vec<ActorSpec> = spec.children.iter().map(flatten).collect();
        if spec.kind != ActorKind::Pipeline {
            return ActorSpec { children, ..spec.clone() };
        }
        let mut flat = Vec::new();
        for c in children {
            if c.kind == ActorKind::Pipeline {
                flat.extend(c.children);
            } else {
                flat.push(c);
            }
        }
        ActorSpec { children: flat, ..spec.clone() }
    }

    /// A Pipeline with its children regrouped as `[c0, Pipeline[c1..]]`.
    pub fn nest_tail(spec: &ActorSpec) -> ActorSpec {
        assert_eq!(spec.kind, ActorKind::Pipeline);
        if spec.children.len() < 2 {
            return spec.clone();
        }
        let mut children = spec.children.clone();
        let tail = children.split_off(1);
        children.push(composite(ActorKind::Pipeline, "Tail", tail));
        ActorSpec { children, ..spec.clone() }
    }

    /// Starting state: the question, a seed SQL and one candidate, so Select
    /// and Optimize have something to work on.
    pub fn seed_state(schema: &Arc<DatabaseSchema>) -> WorkflowState {
        let mut s = WorkflowState::new("Which customers live in Paris?", schema.clone());
        s.final_sql = Some("SELECT name FROM customers".into());
        s.push_candidate("SELECT name FROM customers".into());
        s
    }

    /// Equal states, or errors with equal messages.
    pub fn same_outcome(a: &Result<WorkflowState>, b: &Result<WorkflowState>) -> bool {
        match (a, b) {
            (Ok(x), Ok(y)) => x == y,
            (Err(x), Err(y)) => x.to_string() == y.to_string(),
            _ => false,
        }
    }

    pub fn candidate_set(s: &WorkflowState) -> BTreeSet<String> {
        s.sql_candidates.iter().cloned().collect()
    }

    pub fn run(spec: &ActorSpec, state: &WorkflowState, ctx: &ActorContext) -> Result<WorkflowState> {
        run_actor(spec, state, ctx)
    }
}

pub mod bench {
    use std::path::{Path, PathBuf};

    use serde_json::{json, Value};
    use sqlactors::llm::MockBackend;
    use sqlactors::DatabaseSchema;

    /// Lays out `{root}/toy/dev/` with `dataset.json`, `schema.json` and
    /// `databases/{db_id}/{db_id}.sqlite` for each `(db_id, sql)`.
    pub fn write_benchmark(root: &Path, records: &[Value], dbs: &[(&str, &str)]) -> PathBuf {
        let split = root.join("toy").join("dev");
        let db_root = split.join("databases");
        let schemas: Vec<DatabaseSchema> = dbs
            .iter()
            .map(|(id, sql)| {
                let path = super::make_db(&db_root, id, sql);
                super::introspect(&path, id)
            })
            .collect();
        std::fs::write(split.join("dataset.json"), serde_json::to_string_pretty(records).unwrap()).unwrap();
        std::fs::write(split.join("schema.json"), serde_json::to_string_pretty(&schemas).unwrap()).unwrap();
        split
    }

    /// A task entry over the `toy:dev` benchmark.
    pub fn task(task_id: &str, workflow: Value, eval: &[&str]) -> Value {
        json!({
            "task_id": task_id,
            "task_type": "GenerateTask",
            "data_source": "toy:dev:",
            "schema_source": "toy:dev",
            "eval_type": eval,
            "meta": {"workflow": workflow}
        })
    }

    /// Writes `config.json` (mock backend, benchmark root `dir`) and the mock
    /// script next to it. Returns the config path.
    pub fn write_config(dir: &Path, tasks: &[Value], mock: &MockBackend, engine_extra: Value) -> PathBuf {
        std::fs::write(dir.join("mock.json"), serde_json::to_string_pretty(mock).unwrap()).unwrap();
        let exec: Vec<&str> = tasks.iter().map(|t| t["task_id"].as_str().unwrap()).collect();
        let mut engine = json!({"exec_process": exec, "benchmark_root": ".", "report_dir": "reports"});
        if let (Some(e), Value::Object(extra)) = (engine.as_object_mut(), engine_extra) {
            e.extend(extra);
        }
        let config = json!({
            "api_key": {},
            "llm": {"use": "mock", "model_name": "scripted", "temperature": 0.0, "mock_script": "mock.json"},
            "dataset": {"data_source": "toy:dev:"},
            "database": {"schema_source": "toy:dev"},
            "task": {"task_meta": tasks},
            "engine": engine
        });
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        path
    }

    /// `n` shop questions tagged `#i`, gold answer the Paris customers.
    pub fn shop_records(n: usize) -> Vec<Value> {
        (0..n)
            .map(|i| {
                json!({
                    "id": format!("s{i:02}"),
                    "db_id": "shop",
                    "question": format!("Which customers live in Paris? #{i}"),
                    "query": "SELECT name FROM customers WHERE city = 'Paris'"
                })
            })
            .collect()
    }
}
