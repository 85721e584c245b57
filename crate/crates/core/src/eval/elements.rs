use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::tokenize::{tokenize, Token};
use super::SchemaElementSet;
use crate::data::{fold, DatabaseSchema};

/// Words that end a table list or can never be an alias.
const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL", "ON",
    "USING", "GROUP", "ORDER", "BY", "HAVING", "LIMIT", "OFFSET", "UNION", "INTERSECT", "EXCEPT", "WINDOW",
    "AS", "AND", "OR", "NOT", "WITH", "VALUES", "SET", "DISTINCT", "ALL", "CASE", "WHEN", "THEN", "ELSE",
    "END", "IN", "IS", "NULL", "LIKE", "BETWEEN", "EXISTS", "ASC", "DESC", "RECURSIVE",
];

fn reserved(tok: &Token) -> bool {
    matches!(tok, Token::Word(w) if RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)))
}

/// Identifier at `i` that may name a table, column or alias.
fn name_at(tokens: &[Token], i: usize) -> Option<&str> {
    let tok = tokens.get(i)?;
    if reserved(tok) {
        return None;
    }
    tok.ident()
}

/// Schema elements referenced by `sql`.
///
/// Tables are read after FROM/JOIN (binding aliases), `alias.col` references
/// resolve through the alias map, and bare identifiers are matched
/// case-insensitively against columns of the tables the query mentions.
/// Anything that does not resolve against `schema` is ignored.
pub fn extract_schema_elements(sql: &str, schema: &DatabaseSchema) -> SchemaElementSet {
    let tokens = tokenize(sql);
    let mut aliases: BTreeMap<String, String> = BTreeMap::new();
    let mut tables: Vec<String> = Vec::new();
    let mut structural: HashSet<usize> = HashSet::new();

    let mut i = 0;
    while i < tokens.len() {
        let in_from = tokens[i].is_keyword("FROM");
        if !(in_from || tokens[i].is_keyword("JOIN")) {
            i += 1;
            continue;
        }
        i += 1;
        loop {
            if matches!(tokens.get(i), Some(Token::Symbol('('))) {
                // Derived table: its contents are scanned by the outer loop.
                break;
            }
            let Some(mut name) = name_at(&tokens, i) else { break };
            structural.insert(i);
            // schema-qualified `main.t`
            while matches!(tokens.get(i + 1), Some(Token::Symbol('.'))) {
                match name_at(&tokens, i + 2) {
                    Some(next) => {
                        name = next;
                        i += 2;
                        structural.insert(i);
                    }
                    None => break,
                }
            }
            let table = schema.has_table(name).then(|| fold(name));
            if let Some(t) = &table {
                aliases.insert(t.clone(), t.clone());
                if !tables.contains(t) {
                    tables.push(t.clone());
                }
            }
            i += 1;
            if tokens.get(i).is_some_and(|t| t.is_keyword("AS")) {
                i += 1;
            }
            if let Some(alias) = name_at(&tokens, i) {
                structural.insert(i);
                if let Some(t) = &table {
                    aliases.insert(fold(alias), t.clone());
                }
                i += 1;
            }
            if in_from && matches!(tokens.get(i), Some(Token::Symbol(','))) {
                i += 1;
                continue;
            }
            break;
        }
    }

    let mut found: BTreeSet<String> = tables.iter().cloned().collect();
    let resolve_column = |table: &str, column: &str| {
        schema.column(table, column).map(|c| format!("{}.{}", fold(&c.table_name), fold(&c.column_name)))
    };

    let mut i = 0;
    while i < tokens.len() {
        if structural.contains(&i) {
            i += 1;
            continue;
        }
        let Some(name) = name_at(&tokens, i) else {
            i += 1;
            continue;
        };
        let after_dot = i > 0 && matches!(tokens[i - 1], Token::Symbol('.'));
        let after_as = i > 0 && tokens[i - 1].is_keyword("AS");
        if after_dot || after_as || matches!(tokens.get(i + 1), Some(Token::Symbol('('))) {
            i += 1;
            continue;
        }
        if matches!(tokens.get(i + 1), Some(Token::Symbol('.'))) {
            let qualifier = fold(name);
            let target = aliases
                .get(&qualifier)
                .cloned()
                .or_else(|| schema.has_table(&qualifier).then_some(qualifier));
            if let (Some(table), Some(column)) = (target, name_at(&tokens, i + 2)) {
                if let Some(element) = resolve_column(&table, column) {
                    found.insert(table);
                    found.insert(element);
                }
            }
            i += 3;
            continue;
        }
        for table in &tables {
            if let Some(element) = resolve_column(table, name) {
                found.insert(element);
            }
        }
        i += 1;
    }

    found.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnUnit;

    fn schema() -> DatabaseSchema {
        let cols = [("t", "a"), ("t", "b"), ("u", "b"), ("u", "c"), ("Singer", "Name")]
            .iter()
            .map(|(t, c)| ColumnUnit::new("d", *t, *c, "TEXT"))
            .collect();
        DatabaseSchema::new("d", cols, vec![]).unwrap()
    }

    fn elems(sql: &str) -> Vec<String> {
        extract_schema_elements(sql, &schema()).elements.into_iter().collect()
    }

    #[test]
    fn simple_select() {
        assert_eq!(elems("SELECT a FROM t"), ["t", "t.a"]);
    }

    #[test]
    fn alias_resolution() {
        assert_eq!(elems("SELECT x.a FROM t AS x JOIN u ON x.a=u.b"), ["t", "t.a", "u", "u.b"]);
        assert_eq!(elems("SELECT x.a FROM t x, u y WHERE y.c = 1"), ["t", "t.a", "u", "u.c"]);
    }

    #[test]
    fn no_tables_no_elements() {
        assert!(elems("SELECT 1").is_empty());
    }

    #[test]
    fn unqualified_column_matches_every_query_table_that_has_it() {
        assert_eq!(elems("SELECT b FROM t JOIN u ON t.a = u.c"), ["t", "t.a", "t.b", "u", "u.b", "u.c"]);
    }

    #[test]
    fn strings_functions_and_output_aliases_are_ignored() {
        assert_eq!(elems("SELECT count(*) AS c FROM t WHERE b = 'a'"), ["t", "t.b"]);
        assert_eq!(elems("SELECT \"Name\" FROM singer"), ["singer", "singer.name"]);
    }

    #[test]
    fn subqueries_contribute_their_tables() {
        assert_eq!(elems("SELECT a FROM t WHERE a IN (SELECT c FROM u)"), ["t", "t.a", "u", "u.c"]);
        assert_eq!(elems("SELECT s.c FROM (SELECT c FROM u) AS s"), ["u", "u.c"]);
    }

    #[test]
    fn unknown_identifiers_are_dropped() {
        assert_eq!(elems("SELECT zz, ghost.col FROM nowhere JOIN t ON 1"), ["t"]);
    }
}
