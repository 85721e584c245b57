use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{fold, DatabaseSchema, QueryInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub question: String,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub sql: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub actor: String,
    /// Seconds, as read from the run's clock.
    pub duration: f64,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// The blackboard every actor reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowState {
    pub question: String,
    pub db_id: String,
    pub full_schema: Arc<DatabaseSchema>,
    pub context: Option<String>,
    /// Output of Reduce. Absent means the full schema is in play.
    pub candidate_schema: Option<DatabaseSchema>,
    /// Output of Parse: normalized `table` and `table.column` names.
    pub linked_elements: Option<BTreeSet<String>>,
    pub sub_questions: Vec<SubQuestion>,
    pub sql_candidates: Vec<String>,
    pub feedback_log: Vec<FeedbackEntry>,
    pub final_sql: Option<String>,
    pub trace: Vec<TraceEntry>,
}

impl WorkflowState {
    pub fn new(question: impl Into<String>, full_schema: Arc<DatabaseSchema>) -> Self {
        Self {
            question: question.into(),
            db_id: full_schema.db_id.clone(),
            full_schema,
            context: None,
            candidate_schema: None,
            linked_elements: None,
            sub_questions: Vec::new(),
            sql_candidates: Vec::new(),
            feedback_log: Vec::new(),
            final_sql: None,
            trace: Vec::new(),
        }
    }

    pub fn for_instance(instance: &QueryInstance, schema: Arc<DatabaseSchema>) -> Self {
        let mut state = Self::new(instance.question.clone(), schema);
        state.context = instance.external_context.clone();
        state
    }

    /// The schema actors should work from: the reduced one if present.
    pub fn schema(&self) -> &DatabaseSchema {
        self.candidate_schema.as_ref().unwrap_or(&self.full_schema)
    }

    /// Adds a SQL candidate unless an identical string is already present.
    pub fn push_candidate(&mut self, sql: String) -> bool {
        if self.sql_candidates.contains(&sql) {
            return false;
        }
        self.sql_candidates.push(sql);
        true
    }

    /// Drops linked elements that are not in the current schema.
    pub(crate) fn prune_linked(&mut self) {
        if let Some(linked) = &self.linked_elements {
            let universe = self.schema().elements();
            let kept: BTreeSet<String> = linked.iter().filter(|e| universe.contains(*e)).cloned().collect();
            self.linked_elements = Some(kept);
        }
    }

    pub fn tokens_used(&self) -> u64 {
        self.trace.iter().map(|t| t.tokens).sum()
    }

    /// Checks the blackboard invariants.
    pub fn check_invariants(&self) -> Result<()> {
        if self.db_id != self.full_schema.db_id {
            return Err(Error::Precondition(format!(
                "state db_id `{}` differs from schema `{}`",
                self.db_id, self.full_schema.db_id
            )));
        }
        if let Some(candidate) = &self.candidate_schema {
            for col in &candidate.columns {
                if self.full_schema.column(&col.table_name, &col.column_name) != Some(col) {
                    return Err(Error::Precondition(format!(
                        "candidate column {} is not in the full schema",
                        col.element()
                    )));
                }
            }
        }
        if let Some(linked) = &self.linked_elements {
            let universe = self.schema().elements();
            if let Some(bad) = linked.iter().find(|e| !universe.contains(*e) || **e != fold(e)) {
                return Err(Error::Precondition(format!("linked element `{bad}` is not in the schema")));
            }
        }
        let distinct: BTreeSet<&String> = self.sql_candidates.iter().collect();
        if distinct.len() != self.sql_candidates.len() {
            return Err(Error::Precondition("duplicate SQL candidates".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnUnit;

    fn state() -> WorkflowState {
        let cols = vec![ColumnUnit::new("d", "t", "a", "INT"), ColumnUnit::new("d", "u", "b", "INT")];
        WorkflowState::new("q", Arc::new(DatabaseSchema::new("d", cols, vec![]).unwrap()))
    }

    #[test]
    fn invariants_hold_on_fresh_state() {
        assert!(state().check_invariants().is_ok());
    }

    #[test]
    fn linked_outside_schema_is_flagged() {
        let mut s = state();
        s.linked_elements = Some(["t.zz".to_owned()].into());
        assert!(s.check_invariants().is_err());
        s.prune_linked();
        assert_eq!(s.linked_elements, Some(BTreeSet::new()));
    }

    #[test]
    fn candidate_subset_and_pruning() {
        let mut s = state();
        s.linked_elements = Some(["t".to_owned(), "u.b".to_owned()].into());
        s.candidate_schema = Some(s.full_schema.subset(|c| c.table_name == "t"));
        s.prune_linked();
        assert_eq!(s.linked_elements, Some(["t".to_owned()].into()));
        assert!(s.check_invariants().is_ok());
    }

    #[test]
    fn candidates_are_deduplicated() {
        let mut s = state();
        assert!(s.push_candidate("A".into()));
        assert!(!s.push_candidate("A".into()));
        assert_eq!(s.sql_candidates, ["A"]);
    }
}
