//! Unified schema and question representations.
//!
//! A database schema is held as an ordered list of [`ColumnUnit`]s: each unit is
//! self-describing (it names its database and table), so a schema can be split
//! into one file per column and reassembled without a central index.

mod dataset;
mod schema;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, load_exemplars};
pub use schema::{decompose_schema, load_schema, schema_to_prompt_text};

/// Lowercase-folded form used for every identifier comparison. Stored values
/// keep their original casing.
pub fn fold(ident: &str) -> String {
    ident.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self { table: table.into(), column: column.into() }
    }

    fn matches(&self, table: &str, column: &str) -> bool {
        fold(&self.table) == fold(table) && fold(&self.column) == fold(column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnUnit {
    pub db_id: String,
    pub table_name: String,
    pub column_name: String,
    #[serde(default)]
    pub data_type: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub sample_values: Vec<String>,
    #[serde(default)]
    pub is_primary_key: bool,
    #[serde(default)]
    pub foreign_key_ref: Option<ColumnRef>,
}

impl ColumnUnit {
    pub fn new(
        db_id: impl Into<String>,
        table_name: impl Into<String>,
        column_name: impl Into<String>,
        data_type: impl Into<String>,
    ) -> Self {
        Self {
            db_id: db_id.into(),
            table_name: table_name.into(),
            column_name: column_name.into(),
            data_type: data_type.into(),
            description: String::new(),
            sample_values: Vec::new(),
            is_primary_key: false,
            foreign_key_ref: None,
        }
    }

    pub fn primary_key(mut self) -> Self {
        self.is_primary_key = true;
        self
    }

    /// Normalized `table.column` element name.
    pub fn element(&self) -> String {
        format!("{}.{}", fold(&self.table_name), fold(&self.column_name))
    }

    /// Text the column is embedded from for retrieval.
    pub fn retrieval_text(&self) -> String {
        let mut text = format!("{} {} {}", self.table_name, self.column_name, self.data_type);
        if !self.description.is_empty() {
            text.push(' ');
            text.push_str(&self.description);
        }
        for value in &self.sample_values {
            text.push(' ');
            text.push_str(value);
        }
        text
    }
}

/// Rejects identifiers that are empty or could escape a directory when used as
/// a path component.
pub(crate) fn check_identifier(kind: &str, value: &str) -> Result<()> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Err(Error::SchemaValidation(format!("{kind} is empty")));
    }
    if trimmed == "." || trimmed == ".." || trimmed.contains(['/', '\\', '\0']) {
        return Err(Error::SchemaValidation(format!("{kind} `{value}` is not a valid path component")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub columns: Vec<ColumnUnit>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl DatabaseSchema {
    /// Builds a schema and checks every invariant.
    pub fn new(db_id: impl Into<String>, columns: Vec<ColumnUnit>, foreign_keys: Vec<ForeignKey>) -> Result<Self> {
        let schema = Self { db_id: db_id.into(), columns, foreign_keys };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        check_identifier("db_id", &self.db_id)?;
        let mut seen = BTreeSet::new();
        for col in &self.columns {
            if col.db_id != self.db_id {
                return Err(Error::SchemaValidation(format!(
                    "column {}.{} belongs to `{}`, not `{}`",
                    col.table_name, col.column_name, col.db_id, self.db_id
                )));
            }
            check_identifier("table_name", &col.table_name)?;
            check_identifier("column_name", &col.column_name)?;
            if !seen.insert(col.element()) {
                return Err(Error::SchemaValidation(format!(
                    "duplicate column {}.{} in `{}`",
                    col.table_name, col.column_name, self.db_id
                )));
            }
        }
        for fk in &self.foreign_keys {
            for end in [&fk.from, &fk.to] {
                if self.column(&end.table, &end.column).is_none() {
                    return Err(Error::SchemaValidation(format!(
                        "foreign key endpoint {}.{} not found in `{}`",
                        end.table, end.column, self.db_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnUnit> {
        let (t, c) = (fold(table), fold(column));
        self.columns
            .iter()
            .find(|col| fold(&col.table_name) == t && fold(&col.column_name) == c)
    }

    /// Table names in order of first appearance.
    pub fn tables(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.columns
            .iter()
            .filter(|c| seen.insert(fold(&c.table_name)))
            .map(|c| c.table_name.as_str())
            .collect()
    }

    pub fn has_table(&self, table: &str) -> bool {
        let t = fold(table);
        self.columns.iter().any(|c| fold(&c.table_name) == t)
    }

    pub fn columns_of<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ColumnUnit> + 'a {
        let t = fold(table);
        self.columns.iter().filter(move |c| fold(&c.table_name) == t)
    }

    /// Every normalized `table` and `table.column` element of the schema.
    pub fn elements(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for col in &self.columns {
            out.insert(fold(&col.table_name));
            out.insert(col.element());
        }
        out
    }

    /// Restricts the schema to columns accepted by `keep`, preserving order and
    /// dropping foreign keys with an endpoint outside the subset.
    pub fn subset(&self, mut keep: impl FnMut(&ColumnUnit) -> bool) -> DatabaseSchema {
        let columns: Vec<ColumnUnit> = self.columns.iter().filter(|c| keep(c)).cloned().collect();
        let present = |r: &ColumnRef| columns.iter().any(|c| r.matches(&c.table_name, &c.column_name));
        let foreign_keys = self
            .foreign_keys
            .iter()
            .filter(|fk| present(&fk.from) && present(&fk.to))
            .cloned()
            .collect();
        DatabaseSchema { db_id: self.db_id.clone(), columns, foreign_keys }
    }

    /// Foreign keys with an endpoint on the given column, paired with their
    /// position in [`DatabaseSchema::foreign_keys`].
    pub fn foreign_keys_touching(&self, table: &str, column: &str) -> Vec<(usize, &ForeignKey)> {
        self.foreign_keys
            .iter()
            .enumerate()
            .filter(|(_, fk)| fk.from.matches(table, column) || fk.to.matches(table, column))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub instance_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_schema_elements: Option<BTreeSet<String>>,
}

impl QueryInstance {
    pub fn new(instance_id: impl Into<String>, db_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            db_id: db_id.into(),
            question: question.into(),
            gold_sql: None,
            external_context: None,
            gold_schema_elements: None,
        }
    }

    pub fn with_gold_sql(mut self, sql: impl Into<String>) -> Self {
        self.gold_sql = Some(sql.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub source_descriptor: String,
    pub instances: Vec<QueryInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// A worked (question, reasoning, SQL) triple used for few-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub reasoning: String,
    pub sql: String,
}

impl Exemplar {
    pub fn new(question: impl Into<String>, reasoning: impl Into<String>, sql: impl Into<String>) -> Result<Self> {
        let ex = Self { question: question.into(), reasoning: reasoning.into(), sql: sql.into() };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("question", &self.question), ("reasoning", &self.reasoning), ("sql", &self.sql)] {
            if value.trim().is_empty() {
                return Err(Error::Ingestion(format!("exemplar {name} is empty")));
            }
        }
        Ok(())
    }
}
