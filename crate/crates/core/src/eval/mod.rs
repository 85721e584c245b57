//! Read-only SQL execution and the two evaluation metrics: execution accuracy
//! and schema-linking recall/precision.

mod compare;
mod elements;
mod exec;
pub mod tokenize;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compare::{cells_equal, compare_results, execution_accuracy, EvalPair};
pub use elements::extract_schema_elements;
pub use exec::{execute_sql, is_read_only_statement, SqlExecutor, DEFAULT_MAX_ROWS, DEFAULT_PERMITS, DEFAULT_TIMEOUT};

/// One result cell. Serializes as a plain JSON scalar; blobs as `{"blob": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Bytes { blob: Vec<u8> },
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(rows: Vec<Vec<Cell>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Argument("result rows have differing arity".into()));
            }
        }
        Ok(Self { rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ExecOutcome {
    Ok(ResultTable),
    Error { message: String },
    Timeout,
}

impl ExecOutcome {
    pub fn ok(rows: Vec<Vec<Cell>>) -> Self {
        ExecOutcome::Ok(ResultTable { rows })
    }

    pub fn error(message: impl Into<String>) -> Self {
        ExecOutcome::Error { message: message.into() }
    }

    pub fn table(&self) -> Option<&ResultTable> {
        match self {
            ExecOutcome::Ok(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ExecOutcome::Ok(_))
    }

    /// One-line description fed back to the model by the optimize actor.
    pub fn summary(&self) -> String {
        match self {
            ExecOutcome::Ok(t) if t.is_empty() => "empty result".to_owned(),
            ExecOutcome::Ok(t) => format!("ok: {} rows", t.rows.len()),
            ExecOutcome::Error { message } => format!("error: {message}"),
            ExecOutcome::Timeout => "timeout".to_owned(),
        }
    }
}

/// Folds case and strips identifier quotes from each dotted part.
pub fn normalize_element(element: &str) -> String {
    element
        .split('.')
        .map(|part| {
            part.trim()
                .trim_matches(|c| matches!(c, '"' | '`' | '[' | ']' | '\''))
                .trim()
                .to_lowercase()
        })
        .collect::<Vec<_>>()
        .join(".")
}

/// A set of normalized `table` / `table.column` strings. A column element does
/// not imply its table: sets are compared exactly as given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaElementSet {
    pub elements: BTreeSet<String>,
}

impl SchemaElementSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, element: &str) {
        let e = normalize_element(element);
        if !e.is_empty() {
            self.elements.insert(e);
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, element: &str) -> bool {
        self.elements.contains(&normalize_element(element))
    }

    /// Only the `table.column` elements.
    pub fn columns_only(&self) -> Self {
        Self { elements: self.elements.iter().filter(|e| e.contains('.')).cloned().collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(String::as_str)
    }
}

impl<S: AsRef<str>> FromIterator<S> for SchemaElementSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = Self::new();
        for e in iter {
            set.insert(e.as_ref());
        }
        set
    }
}

/// Returns `(recall, precision)` of `pred` against `gold`.
///
/// Precision of an empty prediction is 0 rather than undefined.
pub fn linking_recall_precision(pred: &SchemaElementSet, gold: &SchemaElementSet) -> Result<(f64, f64)> {
    if gold.is_empty() {
        return Err(Error::Argument("gold schema element set is empty".into()));
    }
    let hits = pred.elements.intersection(&gold.elements).count() as f64;
    let recall = hits / gold.len() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
    Ok((recall, precision))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> SchemaElementSet {
        items.iter().collect()
    }

    #[test]
    fn recall_precision_definitions() {
        assert_eq!(linking_recall_precision(&set(&["t.a", "u.c"]), &set(&["t.a", "t.b"])).unwrap(), (0.5, 0.5));
        assert_eq!(linking_recall_precision(&set(&["t.a", "t.b"]), &set(&["t.a", "t.b"])).unwrap(), (1.0, 1.0));
        assert_eq!(linking_recall_precision(&set(&[]), &set(&["t.a"])).unwrap(), (0.0, 0.0));
        assert!(linking_recall_precision(&set(&["t.a"]), &set(&[])).is_err());
    }

    #[test]
    fn normalization_folds_case_and_quotes() {
        assert_eq!(normalize_element("\"Orders\".[Id]"), "orders.id");
        assert!(set(&["T.A"]).contains("t.a"));
        assert_eq!(set(&["t", "t.a"]).columns_only(), set(&["t.a"]));
    }

    #[test]
    fn cells_round_trip_through_json() {
        let row = vec![Cell::Null, Cell::Integer(3), Cell::Real(2.0), Cell::Text("x".into()), Cell::Bytes { blob: vec![1, 2] }];
        let text = serde_json::to_string(&row).unwrap();
        assert_eq!(text, r#"[null,3,2.0,"x",{"blob":[1,2]}]"#);
        let back: Vec<Cell> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, row);
    }

    #[test]
    fn outcome_serialization_is_tagged() {
        let text = serde_json::to_string(&ExecOutcome::error("boom")).unwrap();
        assert_eq!(text, r#"{"status":"error","message":"boom"}"#);
        assert_eq!(serde_json::to_string(&ExecOutcome::Timeout).unwrap(), r#"{"status":"timeout"}"#);
        let ok = ExecOutcome::ok(vec![vec![Cell::Integer(1)]]);
        let back: ExecOutcome = serde_json::from_str(&serde_json::to_string(&ok).unwrap()).unwrap();
        assert_eq!(back, ok);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(ResultTable::new(vec![vec![Cell::Null], vec![]]).is_err());
    }
}
