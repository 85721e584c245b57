use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::state::WorkflowState;
use crate::data::DatabaseSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRule {
    Union,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarRule {
    Leftmost,
    Rightmost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqRule {
    /// Root prefix, then each child's additions in child order.
    Concat,
    FirstChild,
}

/// How a Tree folds its children's output states into one.
///
/// `question`, `db_id` and `full_schema` are shared by every child and pass
/// through unchanged. Overrides are given as a JSON object of field → rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergePolicy {
    pub sql_candidates: SetRule,
    pub linked_elements: SetRule,
    pub candidate_schema: SetRule,
    pub final_sql: ScalarRule,
    pub context: ScalarRule,
    pub sub_questions: SeqRule,
    pub feedback_log: SeqRule,
    pub trace: SeqRule,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            sql_candidates: SetRule::Union,
            linked_elements: SetRule::Union,
            candidate_schema: SetRule::Union,
            final_sql: ScalarRule::Leftmost,
            context: ScalarRule::Leftmost,
            sub_questions: SeqRule::Concat,
            feedback_log: SeqRule::Concat,
            trace: SeqRule::Concat,
        }
    }
}

impl MergePolicy {
    pub fn from_overrides(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(value.clone())
    }

    /// Folds `outputs` (in child order) produced from `root`.
    pub fn merge(&self, root: &WorkflowState, outputs: &[WorkflowState]) -> WorkflowState {
        let Some((first, rest)) = outputs.split_first() else {
            return root.clone();
        };
        let mut acc = first.clone();
        for next in rest {
            self.merge_pair(root, &mut acc, next);
        }
        acc
    }

    fn merge_pair(&self, root: &WorkflowState, acc: &mut WorkflowState, next: &WorkflowState) {
        acc.sql_candidates = match self.sql_candidates {
            SetRule::Union => {
                let novel: BTreeSet<&String> =
                    next.sql_candidates.iter().filter(|s| !acc.sql_candidates.contains(s)).collect();
                acc.sql_candidates.iter().cloned().chain(novel.into_iter().cloned()).collect()
            }
            SetRule::Intersection => {
                acc.sql_candidates.iter().filter(|s| next.sql_candidates.contains(s)).cloned().collect()
            }
        };

        acc.linked_elements = match (acc.linked_elements.take(), &next.linked_elements) {
            (None, other) => other.clone(),
            (mine, None) => mine,
            (Some(a), Some(b)) => Some(match self.linked_elements {
                SetRule::Union => a.union(b).cloned().collect(),
                SetRule::Intersection => a.intersection(b).cloned().collect(),
            }),
        };

        acc.candidate_schema = match self.candidate_schema {
            // Absent means "whole schema", which absorbs any union.
            SetRule::Union => match (&acc.candidate_schema, &next.candidate_schema) {
                (Some(a), Some(b)) => Some(column_merge(&root.full_schema, a, b, false)),
                _ => None,
            },
            SetRule::Intersection => match (&acc.candidate_schema, &next.candidate_schema) {
                (Some(a), Some(b)) => Some(column_merge(&root.full_schema, a, b, true)),
                (a, b) => a.clone().or_else(|| b.clone()),
            },
        };

        let pick = |rule: ScalarRule, a: &Option<String>, b: &Option<String>| match rule {
            ScalarRule::Leftmost => a.clone().or_else(|| b.clone()),
            ScalarRule::Rightmost => b.clone().or_else(|| a.clone()),
        };
        acc.final_sql = pick(self.final_sql, &acc.final_sql, &next.final_sql);
        acc.context = pick(self.context, &acc.context, &next.context);

        if self.sub_questions == SeqRule::Concat {
            acc.sub_questions.extend(suffix(&next.sub_questions, root.sub_questions.len()));
        }
        if self.feedback_log == SeqRule::Concat {
            acc.feedback_log.extend(suffix(&next.feedback_log, root.feedback_log.len()));
        }
        if self.trace == SeqRule::Concat {
            acc.trace.extend(suffix(&next.trace, root.trace.len()));
        }

        acc.prune_linked();
    }
}

fn suffix<T: Clone>(items: &[T], from: usize) -> impl Iterator<Item = T> + '_ {
    items.iter().skip(from).cloned()
}

fn column_merge(full: &DatabaseSchema, a: &DatabaseSchema, b: &DatabaseSchema, both: bool) -> DatabaseSchema {
    let has = |s: &DatabaseSchema, t: &str, c: &str| s.column(t, c).is_some();
    full.subset(|col| {
        let (ia, ib) = (has(a, &col.table_name, &col.column_name), has(b, &col.table_name, &col.column_name));
        if both {
            ia && ib
        } else {
            ia || ib
        }
    })
}
