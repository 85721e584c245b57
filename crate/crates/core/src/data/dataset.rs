use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{Dataset, Exemplar, QueryInstance};
use crate::error::{Error, Result};

/// Loads a dataset file written with Spider or Bird field names.
///
/// `question`, `db_id` and `query` (Spider) or `SQL` (Bird) are recognised;
/// `evidence` becomes the external context and `gold_schema` the gold schema
/// elements. Instances without an `id` are numbered by array position.
pub fn load_dataset(source_descriptor: &str, path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(source_descriptor, &text)
}

pub(crate) fn parse_dataset(source_descriptor: &str, text: &str) -> Result<Dataset> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::json(source_descriptor, e))?;
    let Value::Array(records) = root else {
        return Err(Error::Ingestion(format!("{source_descriptor}: dataset root must be a JSON array")));
    };

    let mut ids = HashSet::new();
    let mut instances = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let instance = parse_record(index, record)?;
        if !ids.insert(instance.instance_id.clone()) {
            return Err(Error::Ingestion(format!(
                "record {index}: duplicate instance id `{}`",
                instance.instance_id
            )));
        }
        instances.push(instance);
    }
    Ok(Dataset { source_descriptor: source_descriptor.to_owned(), instances })
}

fn text_field(record: &Value, key: &str) -> Option<String> {
    match record.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_record(index: usize, record: &Value) -> Result<QueryInstance> {
    if !record.is_object() {
        return Err(Error::Ingestion(format!("record {index}: not a JSON object")));
    }
    let question = text_field(record, "question").filter(|q| !q.trim().is_empty());
    let db_id = text_field(record, "db_id").filter(|d| !d.trim().is_empty());
    let (question, db_id) = match (question, db_id) {
        (Some(q), Some(d)) => (q, d),
        (None, None) => {
            return Err(Error::Ingestion(format!("record {index}: missing both `question` and `db_id`")))
        }
        (None, Some(_)) => return Err(Error::Ingestion(format!("record {index}: missing `question`"))),
        (Some(_), None) => return Err(Error::Ingestion(format!("record {index}: missing `db_id`"))),
    };

    let gold_sql = text_field(record, "query").or_else(|| text_field(record, "SQL"));
    let external_context = text_field(record, "evidence").filter(|e| !e.trim().is_empty());
    let gold_schema_elements = match record.get("gold_schema") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut set = BTreeSet::new();
            for item in items {
                let Value::String(s) = item else {
                    return Err(Error::Ingestion(format!("record {index}: `gold_schema` entries must be strings")));
                };
                set.insert(crate::eval::normalize_element(s));
            }
            Some(set)
        }
        Some(_) => return Err(Error::Ingestion(format!("record {index}: `gold_schema` must be an array"))),
    };

    Ok(QueryInstance {
        instance_id: text_field(record, "id").unwrap_or_else(|| index.to_string()),
        db_id,
        question,
        gold_sql,
        external_context,
        gold_schema_elements,
    })
}

/// Loads an exemplar corpus: a JSON array of `{question, reasoning, sql}`.
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_exemplars(&text, &path.display().to_string())
}

pub(crate) fn parse_exemplars(text: &str, context: &str) -> Result<Vec<Exemplar>> {
    let exemplars: Vec<Exemplar> = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
    for ex in &exemplars {
        ex.validate()?;
    }
    Ok(exemplars)
}
