//! Lexical helpers over SQL text. No parsing beyond tokens and paren depth.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Number,
    /// Single-quoted or dollar-quoted literal, verbatim.
    StringLit,
    /// Double-quoted identifier, verbatim.
    QuotedIdent,
    Comment,
    Whitespace,
    Symbol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
}

pub fn tokenize(sql: &str) -> Vec<Token<'_>> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let c = bytes[i];
        let kind = if c.is_ascii_whitespace() {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            TokenKind::Whitespace
        } else if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            TokenKind::Comment
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            TokenKind::Comment
        } else if c == b'\'' || c == b'"' {
            i = scan_quoted(bytes, i, c);
            if c == b'\'' {
                TokenKind::StringLit
            } else {
                TokenKind::QuotedIdent
            }
        } else if c == b'$' {
            match dollar_tag(bytes, i) {
                Some(tag_len) => {
                    let tag = &bytes[i..i + tag_len];
                    i += tag_len;
                    loop {
                        if i >= bytes.len() {
                            break;
                        }
                        if bytes[i..].starts_with(tag) {
                            i += tag_len;
                            break;
                        }
                        i += 1;
                    }
                    TokenKind::StringLit
                }
                None => {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    TokenKind::Symbol
                }
            }
        } else if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$' || bytes[i] >= 0x80)
            {
                i += 1;
            }
            TokenKind::Word
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
            TokenKind::Number
        } else {
            i += 1;
            while i < bytes.len() && bytes[i] >= 0x80 && !sql.is_char_boundary(i) {
                i += 1;
            }
            TokenKind::Symbol
        };
        out.push(Token {
            kind,
            text: &sql[start..i],
        });
    }
    out
}

fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

fn dollar_tag(bytes: &[u8], start: usize) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
        if i == start + 1 && bytes[i].is_ascii_digit() {
            return None;
        }
        i += 1;
    }
    (bytes.get(i) == Some(&b'$')).then_some(i + 1 - start)
}

const KEYWORDS: &[&str] = &[
    "all", "alter", "analyze", "and", "any", "array", "as", "asc", "avg", "between", "bigint",
    "boolean", "both", "by", "case", "cast", "char", "character", "coalesce", "count", "create",
    "cross", "cube", "current_date", "current_timestamp", "date", "day", "decimal", "default",
    "delete", "desc", "distinct", "double", "drop", "else", "end", "except", "exists", "explain",
    "extract", "false", "fetch", "filter", "first", "float", "following", "for", "from", "full",
    "group", "grouping", "having", "ilike", "in", "inner", "insert", "int", "integer", "intersect",
    "interval", "into", "is", "join", "last", "lateral", "leading", "left", "like", "limit",
    "materialized", "max", "min", "month", "natural", "not", "null", "nullif", "nulls", "numeric",
    "offset", "on", "only", "or", "order", "outer", "over", "partition", "preceding", "range",
    "real", "recursive", "right", "rollup", "row", "rows", "select", "set", "sets", "smallint",
    "some", "substring", "sum", "table", "then", "ties", "timestamp", "to", "trailing", "trim",
    "true", "unbounded", "union", "update", "using", "values", "varchar", "when", "where",
    "window", "with", "within", "year",
];

pub fn is_keyword(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    KEYWORDS.binary_search(&lower.as_str()).is_ok()
}

/// Lowercased non-keyword identifiers of at least three characters.
///
/// Short tokens are mostly table aliases, which carry no schema detail.
pub fn identifiers(sql: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for tok in tokenize(sql) {
        let word = match tok.kind {
            TokenKind::Word => tok.text,
            TokenKind::QuotedIdent => tok.text.trim_matches('"'),
            _ => continue,
        };
        if word.chars().count() >= 3 && !is_keyword(word) {
            out.insert(word.to_ascii_lowercase());
        }
    }
    out
}

/// Whether the outermost query block carries an ORDER BY, and whether the
/// lexical check was confident (balanced parentheses).
pub fn outer_order_by(sql: &str) -> (bool, bool) {
    let mut depth: i64 = 0;
    let mut balanced = true;
    let mut prev_order = false;
    let mut found = false;
    for tok in tokenize(sql) {
        match tok.kind {
            TokenKind::Whitespace | TokenKind::Comment => continue,
            TokenKind::Symbol if tok.text == "(" => depth += 1,
            TokenKind::Symbol if tok.text == ")" => {
                depth -= 1;
                if depth < 0 {
                    balanced = false;
                    depth = 0;
                }
            }
            TokenKind::Word if depth == 0 => {
                let w = tok.text.to_ascii_lowercase();
                if prev_order && w == "by" {
                    found = true;
                }
                prev_order = w == "order";
                continue;
            }
            _ => {}
        }
        prev_order = false;
    }
    (found, balanced && depth == 0)
}

/// Trims whitespace and any trailing semicolons.
pub fn strip_terminator(sql: &str) -> &str {
    let mut s = sql.trim();
    while let Some(rest) = s.strip_suffix(';') {
        s = rest.trim_end();
    }
    s
}
