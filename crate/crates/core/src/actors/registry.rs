use std::collections::BTreeMap;

use serde_json::Value;

use super::spec::{ActorKind, ActorSpec};
use crate::error::{Error, Result};

/// Named actors: each is one of the seven atomic kinds with its own prompt
/// style line and template lookup key.
const BUILTIN: &[(&str, ActorKind, &str)] = &[
    ("Reducer", ActorKind::Reduce, ""),
    ("LinkAlignReducer", ActorKind::Reduce, "Keep every column that could plausibly be needed; favour recall."),
    ("CHESSReducer", ActorKind::Reduce, "Keep only columns whose names or values match the question."),
    ("Parser", ActorKind::Parse, ""),
    ("LinkAlignParser", ActorKind::Parse, "Link every entity and value mention in the question to the schema."),
    ("RSLSQLBiDirParser", ActorKind::Parse, "Link in both directions: question to schema, then schema back to question."),
    ("DINSQLParser", ActorKind::Parse, "Find the tables first, then the columns used in conditions and output."),
    ("CHESSParser", ActorKind::Parse, "Match keywords and literal values in the question to columns."),
    ("MACSQLParser", ActorKind::Parse, "Select the relevant tables and their useful columns."),
    ("Generator", ActorKind::Generate, ""),
    ("DINSQLGenerator", ActorKind::Generate, "Think in steps: tables, joins, conditions, then the final query."),
    ("CHESSGenerator", ActorKind::Generate, "Check candidate columns and literal values before writing the query."),
    ("MACSQLGenerator", ActorKind::Generate, "Write the query the way a careful analyst would."),
    ("RSLSQLGenerator", ActorKind::Generate, "Use the linked schema elements wherever possible."),
    ("Decomposer", ActorKind::Decompose, ""),
    ("MACSQLDecompose", ActorKind::Decompose, "Decompose the question the way a planning agent would."),
    ("DINSQLDecomposer", ActorKind::Decompose, "Classify the question and split nested parts into sub-questions."),
    ("Scaler", ActorKind::Scale, ""),
    ("RSLSQLScaler", ActorKind::Scale, "Vary the join path and the aggregation strategy between candidates."),
    ("ChessScaler", ActorKind::Scale, "Vary the reasoning strategy between candidates."),
    ("MACSQLScaler", ActorKind::Scale, "Vary the decomposition between candidates."),
    ("DINSQLScaler", ActorKind::Scale, "Vary the query structure between candidates."),
    ("Optimizer", ActorKind::Optimize, ""),
    ("MACSQLOptimizer", ActorKind::Optimize, "Act as a refiner: fix the query using the execution feedback."),
    ("LinkAlignOptimizer", ActorKind::Optimize, "Re-check the schema links implied by the query against the feedback."),
    ("CHESSOptimizer", ActorKind::Optimize, "Revise the query so that it executes and returns meaningful rows."),
    ("DINSQLOptimizer", ActorKind::Optimize, "Self-correct the query; keep what is already right."),
    ("Selector", ActorKind::Select, ""),
    ("CHESSSelector", ActorKind::Select, "Judge each candidate against the question and pick the most faithful one."),
    ("RSLSQLSelector", ActorKind::Select, "Prefer the candidate that uses the linked schema correctly."),
    ("MACSQLSelector", ActorKind::Select, "Pick the candidate a reviewer would approve."),
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    kind: ActorKind,
    style: String,
}

/// Maps actor names to atomic specs. Lookup is exact first, then
/// case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorRegistry {
    entries: BTreeMap<String, Entry>,
}

impl Default for ActorRegistry {
    fn default() -> Self {
        let entries = BUILTIN
            .iter()
            .map(|(name, kind, style)| ((*name).to_owned(), Entry { kind: *kind, style: (*style).to_owned() }))
            .collect();
        Self { entries }
    }
}

impl ActorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ActorKind, style: impl Into<String>) -> Result<()> {
        if kind.is_composite() {
            return Err(Error::Config(format!("cannot register composite kind {kind}")));
        }
        self.entries.insert(name.into(), Entry { kind, style: style.into() });
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn find(&self, name: &str) -> Option<(&String, &Entry)> {
        self.entries
            .get_key_value(name)
            .or_else(|| self.entries.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)))
    }

    pub fn kind_of(&self, name: &str) -> Option<ActorKind> {
        self.find(name).map(|(_, e)| e.kind)
    }

    /// Atomic spec for `name`, bound to the template keyed by its registry name.
    pub fn lookup(&self, name: &str) -> Result<ActorSpec> {
        let (key, entry) = self.find(name.trim()).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Config(format!("unknown actor `{name}`; registered actors: {}", known.join(", ")))
        })?;
        let mut spec = ActorSpec::atomic(entry.kind, key.clone()).with_param("prompt_template_id", key.as_str());
        if !entry.style.is_empty() {
            spec = spec.with_param("style", entry.style.as_str());
        }
        Ok(spec)
    }

    /// Builds an [`ActorSpec`] from the workflow encoding:
    ///
    /// - `"Name"`: a registered atomic actor; `"A + B + C"` is shorthand for a
    ///   pipeline of registered actors.
    /// - `{"pipeline": [..]}` or a bare JSON array: sequential composition.
    /// - `{"tree": [..], "merge": {..}}`: fan-out with optional merge overrides.
    /// - `{"actor": "Name", "params": {..}, "name": ".."}`: an atomic actor with
    ///   parameter overrides.
    pub fn parse_workflow(&self, encoding: &Value) -> Result<ActorSpec> {
        let mut spec = self.parse_node(encoding)?;
        spec.uniquify_names();
        spec.validate()?;
        Ok(spec)
    }

    fn parse_children(&self, kind: ActorKind, items: &Value) -> Result<Vec<ActorSpec>> {
        let list = items
            .as_array()
            .ok_or_else(|| Error::Config(format!("`{}` must be a list", kind.template_id())))?;
        if list.is_empty() {
            return Err(Error::Config(format!("`{}` must have at least one child", kind.template_id())));
        }
        list.iter().map(|v| self.parse_node(v)).collect()
    }

    fn parse_node(&self, node: &Value) -> Result<ActorSpec> {
        match node {
            Value::String(s) if s.contains('+') => {
                let children = s.split('+').map(|part| self.lookup(part.trim())).collect::<Result<Vec<_>>>()?;
                Ok(ActorSpec { kind: ActorKind::Pipeline, name: "Pipeline".into(), params: BTreeMap::new(), children })
            }
            Value::String(s) => self.lookup(s),
            Value::Array(_) => {
                let children = self.parse_children(ActorKind::Pipeline, node)?;
                Ok(ActorSpec { kind: ActorKind::Pipeline, name: "Pipeline".into(), params: BTreeMap::new(), children })
            }
            Value::Object(map) => {
                let allowed: &[&str] = if map.contains_key("pipeline") {
                    &["pipeline", "name"]
                } else if map.contains_key("tree") {
                    &["tree", "merge", "name"]
                } else if map.contains_key("actor") {
                    &["actor", "params", "name"]
                } else {
                    return Err(Error::Config(format!(
                        "workflow object needs one of `pipeline`, `tree` or `actor`: {node}"
                    )));
                };
                if let Some(extra) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
                    return Err(Error::Config(format!("unexpected key `{extra}` in workflow object")));
                }
                let mut spec = if let Some(items) = map.get("pipeline") {
                    let children = self.parse_children(ActorKind::Pipeline, items)?;
                    ActorSpec { kind: ActorKind::Pipeline, name: "Pipeline".into(), params: BTreeMap::new(), children }
                } else if let Some(items) = map.get("tree") {
                    let children = self.parse_children(ActorKind::Tree, items)?;
                    let mut params = BTreeMap::new();
                    if let Some(merge) = map.get("merge") {
                        params.insert("merge".to_owned(), merge.clone());
                    }
                    ActorSpec { kind: ActorKind::Tree, name: "Tree".into(), params, children }
                } else {
                    let actor = map["actor"]
                        .as_str()
                        .ok_or_else(|| Error::Config("`actor` must be a string".into()))?;
                    let mut spec = self.lookup(actor)?;
                    match map.get("params") {
                        None => {}
                        Some(Value::Object(params)) => {
                            spec.params.extend(params.iter().map(|(k, v)| (k.clone(), v.clone())));
                        }
                        Some(_) => return Err(Error::Config(format!("`params` of `{actor}` must be an object"))),
                    }
                    spec
                };
                if let Some(name) = map.get("name") {
                    spec.name = name
                        .as_str()
                        .ok_or_else(|| Error::Config("`name` must be a string".into()))?
                        .to_owned();
                }
                Ok(spec)
            }
            other => Err(Error::Config(format!("invalid workflow node: {other}"))),
        }
    }
}

/// [`ActorRegistry::parse_workflow`] on the default registry.
pub fn parse_workflow(encoding: &Value) -> Result<ActorSpec> {
    ActorRegistry::default().parse_workflow(encoding)
}
