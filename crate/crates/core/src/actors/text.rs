//! Parsing helpers for LLM completions.

use std::collections::BTreeSet;

use crate::data::DatabaseSchema;
use crate::eval::normalize_element;

/// Content of the first fenced code block, if any.
fn first_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // Skip the info string (```sql).
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    Some(match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    })
}

/// Strips a short `Label:` prefix such as `SQL:` or `Final answer:`.
fn strip_label(line: &str) -> &str {
    if let Some(idx) = line.find(':') {
        let label = &line[..idx];
        if !label.is_empty() && label.len() <= 24 && label.chars().all(|c| c.is_ascii_alphabetic() || matches!(c, ' ' | '-' | '_')) {
            return line[idx + 1..].trim_start();
        }
    }
    line
}

fn starts_statement(line: &str) -> bool {
    let upper: String = line.chars().take(7).collect::<String>().to_ascii_uppercase();
    let word_end = |kw: &str| {
        upper.starts_with(kw) && line[kw.len()..].chars().next().is_none_or(|c| c.is_whitespace() || c == '(')
    };
    word_end("SELECT") || word_end("WITH")
}

/// Byte offset of the first `;` outside quotes, if any.
fn statement_end(sql: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in sql.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if matches!(c, '\'' | '"' | '`') => quote = Some(c),
            None if c == ';' => return Some(i),
            None => {}
        }
    }
    None
}

fn extract_from(text: &str, fenced: bool) -> Option<String> {
    let mut offset = 0;
    let mut start = None;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let lead = offset + line.len() - trimmed.len();
        if starts_statement(trimmed) {
            start = Some(lead);
            break;
        }
        let unlabeled = strip_label(trimmed);
        if starts_statement(unlabeled) {
            start = Some(lead + trimmed.len() - unlabeled.len());
            break;
        }
        offset += line.len();
    }
    let rest = &text[start?..];
    let mut stmt = match statement_end(rest) {
        Some(end) => &rest[..end],
        None => rest,
    };
    if !fenced {
        if let Some(blank) = stmt.find("\n\n").or_else(|| stmt.find("\n\r\n")) {
            stmt = &stmt[..blank];
        }
        if let Some(fence) = stmt.find("```") {
            stmt = &stmt[..fence];
        }
    }
    let stmt = stmt.trim();
    (!stmt.is_empty()).then(|| stmt.to_owned())
}

/// First SQL statement in a completion: the first fenced block if it holds
/// one, otherwise the first line starting with SELECT or WITH (an optional
/// `SQL:`-style label is allowed), cut at the first unquoted `;` and, outside a
/// fence, at the first blank line.
pub fn extract_sql(text: &str) -> Option<String> {
    if let Some(block) = first_fence(text) {
        if let Some(sql) = extract_from(block, true) {
            return Some(sql);
        }
    }
    extract_from(text, false)
}

fn clean_item(raw: &str) -> String {
    let mut s = raw.trim();
    s = s.trim_start_matches(['-', '*', '•', '>']).trim();
    // "1." / "2)" list markers
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && s[digits..].starts_with(['.', ')']) {
        s = s[digits + 1..].trim();
    }
    s = strip_label(s);
    let unquoted: String = s.chars().filter(|c| !matches!(c, '"' | '`' | '[' | ']')).collect();
    unquoted
        .trim_matches(|c: char| matches!(c, '\'' | '(' | ')' | '.') || c.is_whitespace())
        .to_owned()
}

fn looks_like_element(item: &str) -> bool {
    let mut parts = item.split('.');
    let ok = |p: &str| {
        !p.is_empty() && p.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_') && p.chars().all(|c| c.is_alphanumeric() || c == '_' || c == ' ')
    };
    match (parts.next(), parts.next(), parts.next()) {
        (Some(t), None, _) => ok(t),
        (Some(t), Some(c), None) => ok(t) && ok(c),
        _ => false,
    }
}

/// Result of reading a schema-linking answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedParse {
    pub elements: BTreeSet<String>,
    /// Identifier-shaped items that were not in the schema.
    pub dropped: usize,
    /// No item in the answer looked like an identifier at all.
    pub unparseable: bool,
}

/// Reads `table` / `table.column` items from a free-form answer, keeping only
/// those present in `schema`. A kept column also brings in its table.
pub fn parse_linked_elements(text: &str, schema: &DatabaseSchema) -> LinkedParse {
    let body = first_fence(text).unwrap_or(text);
    let mut elements = BTreeSet::new();
    let mut shaped = 0usize;
    let mut dropped = 0usize;
    for raw in body.split([',', '\n', ';']) {
        let item = clean_item(raw);
        if item.is_empty() || !looks_like_element(&item) {
            continue;
        }
        shaped += 1;
        let norm = normalize_element(&item);
        match norm.split_once('.') {
            Some((t, c)) if schema.column(t, c).is_some() => {
                elements.insert(t.to_owned());
                elements.insert(norm.clone());
            }
            None if schema.has_table(&norm) => {
                elements.insert(norm.clone());
            }
            _ => dropped += 1,
        }
    }
    LinkedParse { elements, dropped, unparseable: shaped == 0 }
}

/// One sub-question per non-empty line, list markers and labels removed.
pub fn parse_sub_questions(text: &str) -> Vec<String> {
    let body = first_fence(text).unwrap_or(text);
    body.lines()
        .map(|line| {
            let mut s = line.trim().trim_start_matches(['-', '*', '•']).trim();
            let digits = s.chars().take_while(char::is_ascii_digit).count();
            if digits > 0 && s[digits..].starts_with(['.', ')', ':']) {
                s = s[digits + 1..].trim();
            }
            strip_label(s).trim().to_owned()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// First integer in `text` that lies in `1..=n`, converted to a 0-based index.
pub fn parse_vote(text: &str, n: usize) -> Option<usize> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse::<usize>().ok())
        .find(|v| (1..=n).contains(v))
        .map(|v| v - 1)
}
