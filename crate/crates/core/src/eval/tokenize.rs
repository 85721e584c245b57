//! A small SQL lexer: enough to strip comments and string literals, find
//! identifiers, and track parenthesis depth. It does not parse.

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    /// Bare word: keyword or unquoted identifier, original casing.
    Word(String),
    /// `"x"`, `` `x` `` or `[x]`, without the quotes.
    Quoted(String),
    /// `'...'` literal with `''` unescaped.
    Str(String),
    Number(String),
    Symbol(char),
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self, Token::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    /// Identifier text of a bare or quoted word.
    pub fn ident(&self) -> Option<&str> {
        match self {
            Token::Word(w) | Token::Quoted(w) => Some(w),
            _ => None,
        }
    }
}

pub fn tokenize(sql: &str) -> Vec<Token> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
        } else if c == '\'' {
            let (text, next) = quoted_run(&chars, i, '\'');
            out.push(Token::Str(text));
            i = next;
        } else if c == '"' || c == '`' {
            let (text, next) = quoted_run(&chars, i, c);
            out.push(Token::Quoted(text));
            i = next;
        } else if c == '[' {
            let end = chars[i + 1..].iter().position(|&x| x == ']').map_or(chars.len(), |p| i + 1 + p);
            out.push(Token::Quoted(chars[i + 1..end].iter().collect()));
            i = (end + 1).min(chars.len());
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
            out.push(Token::Number(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(Token::Word(chars[start..i].iter().collect()));
        } else {
            out.push(Token::Symbol(c));
            i += 1;
        }
    }
    out
}

/// Reads a run delimited by `quote`, where a doubled quote escapes itself.
fn quoted_run(chars: &[char], start: usize, quote: char) -> (String, usize) {
    let mut text = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        if chars[i] == quote {
            if chars.get(i + 1) == Some(&quote) {
                text.push(quote);
                i += 2;
                continue;
            }
            return (text, i + 1);
        }
        text.push(chars[i]);
        i += 1;
    }
    (text, i)
}

/// First keyword of the statement, uppercased, ignoring comments and leading
/// parentheses.
pub fn leading_keyword(sql: &str) -> Option<String> {
    tokenize(sql).into_iter().find_map(|t| match t {
        Token::Word(w) => Some(w.to_ascii_uppercase()),
        Token::Symbol('(') => None,
        _ => Some(String::new()),
    })
    .filter(|w| !w.is_empty())
}

/// Whether the outermost query (parenthesis depth zero) has an ORDER BY.
pub fn has_outer_order_by(sql: &str) -> bool {
    let tokens = tokenize(sql);
    let mut depth = 0i32;
    for (i, tok) in tokens.iter().enumerate() {
        match tok {
            Token::Symbol('(') => depth += 1,
            Token::Symbol(')') => depth -= 1,
            t if depth == 0 && t.is_keyword("ORDER") && tokens.get(i + 1).is_some_and(|n| n.is_keyword("BY")) => {
                return true;
            }
            _ => {}
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_comments_and_strings() {
        let toks = tokenize("SELECT 'it''s' -- note\n/* block */ FROM \"My Table\"");
        assert_eq!(
            toks,
            vec![
                Token::Word("SELECT".into()),
                Token::Str("it's".into()),
                Token::Word("FROM".into()),
                Token::Quoted("My Table".into()),
            ]
        );
    }

    #[test]
    fn bracket_and_backtick_identifiers() {
        let toks = tokenize("[a b].`c`");
        assert_eq!(toks, vec![Token::Quoted("a b".into()), Token::Symbol('.'), Token::Quoted("c".into())]);
    }

    #[test]
    fn leading_keyword_skips_comments_and_parens() {
        assert_eq!(leading_keyword("-- hi\n  (select 1)").as_deref(), Some("SELECT"));
        assert_eq!(leading_keyword("/* x */ with a as (select 1) select * from a").as_deref(), Some("WITH"));
        assert_eq!(leading_keyword("'x'"), None);
        assert_eq!(leading_keyword(""), None);
    }

    #[test]
    fn order_by_only_counts_at_depth_zero() {
        assert!(has_outer_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_outer_order_by("SELECT * FROM (SELECT a FROM t ORDER BY a LIMIT 3)"));
        assert!(!has_outer_order_by("SELECT 'ORDER BY' FROM t"));
        assert!(!has_outer_order_by("SELECT a FROM t -- ORDER BY a"));
    }
}
