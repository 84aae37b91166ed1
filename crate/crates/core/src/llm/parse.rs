use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::template::UNSEEN_RULE;
use super::LlmError;
use crate::sqltext;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRewrite {
    pub sql: String,
    pub rules: Vec<String>,
}

static LIST_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*\u{2022}]|\d+[.)])\s+(.+?)\s*$").unwrap());
static SQL_START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(select|with)\b").unwrap());
static NEGATED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(\bnot\b|n't\b)[^.?!]{0,40}\bequivalent|\bnon-?\s?equivalent|\binequivalent")
        .unwrap()
});
static AFFIRMED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bequivalent\b").unwrap());
static HEDGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(maybe|might|may|possibly|unclear|uncertain|unsure|not sure|hard to say|depends)\b")
        .unwrap()
});

/// Where the SQL block sits in the reply, by line index.
struct SqlSpan {
    sql: String,
    start: usize,
    end: usize,
}

fn find_sql(lines: &[&str]) -> Option<SqlSpan> {
    // Fenced blocks first.
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim_start().starts_with("```") {
            let start = i;
            let mut j = i + 1;
            while j < lines.len() && !lines[j].trim_start().starts_with("```") {
                j += 1;
            }
            let body = lines[start + 1..j.min(lines.len())].join("\n");
            let sql = sqltext::strip_terminator(&body).to_string();
            if !sql.is_empty() {
                return Some(SqlSpan { sql, start, end: j.min(lines.len() - 1) });
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    // Fallback: a line starting with SELECT/WITH up to the next blank line or
    // list item.
    let start = lines.iter().position(|l| SQL_START.is_match(l))?;
    let mut end = start;
    while end + 1 < lines.len() {
        let next = lines[end + 1];
        if next.trim().is_empty() || LIST_ITEM.is_match(next) {
            break;
        }
        end += 1;
    }
    let body = lines[start..=end].join("\n");
    let sql = sqltext::strip_terminator(&body).to_string();
    Some(SqlSpan { sql, start, end })
}

fn clean_rule(raw: &str) -> String {
    let s = raw.trim().trim_matches('*').trim();
    let s = s.replace("**", "");
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pulls the candidate SQL out of a reply, or `None` when there is none.
pub fn extract_sql(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    find_sql(&lines).map(|s| s.sql)
}

/// Splits a rewrite reply into the candidate SQL and the listed rules.
///
/// The first fenced code block wins; without one, the first line starting
/// with `select`/`with` opens the SQL. Rules are the list items after the SQL
/// (or before it when nothing follows).
pub fn parse_rewrite_response(text: &str) -> Result<ParsedRewrite, LlmError> {
    let lines: Vec<&str> = text.lines().collect();
    let span = find_sql(&lines).ok_or(LlmError::NoSqlFound)?;
    let collect = |range: &[&str]| -> Vec<String> {
        let mut in_fence = false;
        let mut out = Vec::new();
        for l in range {
            if l.trim_start().starts_with("```") {
                in_fence = !in_fence;
                continue;
            }
            if in_fence {
                continue;
            }
            if let Some(c) = LIST_ITEM.captures(l) {
                let rule = clean_rule(&c[1]);
                if !rule.is_empty() {
                    out.push(rule);
                }
            }
        }
        out
    };
    let mut rules = collect(&lines[(span.end + 1).min(lines.len())..]);
    if rules.is_empty() {
        rules = collect(&lines[..span.start]);
    }
    Ok(ParsedRewrite { sql: span.sql, rules })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "analysis", rename_all = "snake_case")]
pub enum EquivalenceVerdict {
    Equivalent,
    NotEquivalent(String),
}

impl EquivalenceVerdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, EquivalenceVerdict::Equivalent)
    }
}

fn leading_region(text: &str) -> String {
    for line in text.lines() {
        let l = line
            .trim()
            .trim_start_matches(['#', '*', '>', ' '])
            .trim();
        let l = l
            .strip_prefix("Answer:")
            .or_else(|| l.strip_prefix("**Answer:**"))
            .unwrap_or(l)
            .trim();
        if !l.is_empty() {
            return l.replace("**", "");
        }
    }
    String::new()
}

/// Reads the verdict from the first non-empty line of a semantic-check reply.
/// Anything short of a plain affirmative counts as not equivalent.
pub fn parse_equivalence_verdict(text: &str) -> EquivalenceVerdict {
    let head = leading_region(text);
    let affirmative = !NEGATED.is_match(&head)
        && AFFIRMED.is_match(&head)
        && !head.contains('?')
        && !HEDGE.is_match(&head);
    if affirmative {
        EquivalenceVerdict::Equivalent
    } else {
        EquivalenceVerdict::NotEquivalent(text.to_string())
    }
}

fn normalize(s: &str) -> String {
    let lowered = s.to_lowercase().replace("**", "");
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c == '\u{201c}' || c == '\u{201d}' || c.is_whitespace())
        .to_string()
}

/// Maps a group-prediction reply to an index into `candidates`; `None` means
/// "Unseen rule" or a selection that cannot be matched.
pub fn parse_group_selection(reply: &str, candidates: &[String]) -> Option<usize> {
    let head = leading_region(reply);
    let mut region = normalize(&head);
    if region.contains(&UNSEEN_RULE.to_lowercase()) {
        return None;
    }
    // Leading option number, e.g. "3. Use explicit ...", "option 3" or just "3".
    if let Some(rest) = region.strip_prefix("option ") {
        region = rest.trim_start().to_string();
    }
    let digits: String = region.chars().take_while(|c| c.is_ascii_digit()).collect();
    if !digits.is_empty() {
        let rest = region[digits.len()..].to_string();
        let rest = rest.trim_start_matches(['.', ')', ':', ' ']).to_string();
        if rest.is_empty() {
            let n: usize = digits.parse().ok()?;
            return (n >= 2 && n - 2 < candidates.len()).then(|| n - 2);
        }
        region = rest;
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let cn = normalize(c);
        if cn.is_empty() {
            continue;
        }
        let hit = region.contains(&cn) || (region.len() >= 8 && cn.contains(&region));
        if hit && best.is_none_or(|(_, len)| cn.len() > len) {
            best = Some((i, cn.len()));
        }
    }
    best.map(|(i, _)| i)
}
