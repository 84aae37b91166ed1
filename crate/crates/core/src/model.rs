//! Shared domain types: queries, candidate rewrites, explanations, outcomes
//! and the run budget.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sqltext;

/// Default minimum speedup for a rewrite to be accepted.
pub const DEFAULT_THETA: f64 = 1.05;

/// Default per-query time allowance in seconds.
pub const DEFAULT_QUERY_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub String);

impl QueryId {
    pub fn new(id: impl Into<String>) -> Self {
        QueryId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A workload query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub sql: String,
    pub canonical_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Query {
    pub fn new(id: impl Into<String>, sql: impl Into<String>) -> Result<Self> {
        let sql = sql.into();
        if sql.trim().is_empty() {
            return Err(Error::InvalidInput("query text is empty".into()));
        }
        let canonical_sql = canonicalize_sql(&sql);
        Ok(Query {
            id: QueryId::new(id),
            sql,
            canonical_sql,
            embedding: None,
        })
    }
}

/// Whitespace and keyword-case normalization of SQL text.
///
/// String literals and quoted identifiers are copied untouched, comments are
/// dropped and trailing semicolons are stripped. The transform is idempotent.
pub fn canonicalize_sql(sql: &str) -> String {
    let mut out = String::with_capacity(sql.len());
    let mut pending_space = false;
    for tok in sqltext::tokenize(sql) {
        match tok.kind {
            sqltext::TokenKind::Comment => {
                pending_space = true;
                continue;
            }
            sqltext::TokenKind::Whitespace => {
                pending_space = true;
                continue;
            }
            _ => {}
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        match tok.kind {
            sqltext::TokenKind::Word if sqltext::is_keyword(tok.text) => {
                out.push_str(&tok.text.to_ascii_lowercase())
            }
            _ => out.push_str(tok.text),
        }
    }
    loop {
        let trimmed = out.trim_end();
        if let Some(stripped) = trimmed.strip_suffix(';') {
            out = stripped.to_string();
        } else {
            out.truncate(trimmed.len());
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Suggested,
    SemanticallyCorrected,
    SyntaxCorrected,
}

/// A rewrite proposed for a query, tracking how far along correction it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRewrite {
    pub source_id: QueryId,
    pub sql: String,
    pub stage: Stage,
    pub revision: u32,
}

impl CandidateRewrite {
    pub fn suggested(source_id: QueryId, sql: impl Into<String>) -> Self {
        CandidateRewrite {
            source_id,
            sql: sql.into(),
            stage: Stage::Suggested,
            revision: 0,
        }
    }

    /// Next revision of this candidate, produced by one correction iteration.
    pub fn revised(&self, sql: impl Into<String>) -> Self {
        CandidateRewrite {
            source_id: self.source_id.clone(),
            sql: sql.into(),
            stage: self.stage,
            revision: self.revision + 1,
        }
    }

    /// Moves the candidate to `stage`. Stages only advance.
    pub fn advance(mut self, stage: Stage) -> Self {
        if stage > self.stage {
            self.stage = stage;
        }
        self
    }

    pub fn canonical_sql(&self) -> String {
        canonicalize_sql(&self.sql)
    }
}

/// Rules the model reports having applied, with optional applicability notes
/// (one per rule, aligned by index).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub rules: Vec<String>,
    #[serde(default)]
    pub conditions: Vec<Option<String>>,
}

impl Explanation {
    pub fn new(rules: Vec<String>) -> Self {
        let conditions = vec![None; rules.len()];
        Explanation { rules, conditions }
    }

    pub fn condition(&self, idx: usize) -> Option<&str> {
        self.conditions.get(idx).and_then(|c| c.as_deref())
    }

    /// Drops every rule that mentions an identifier of `query_sql`, returning
    /// the dropped descriptions.
    pub fn strip_query_specific(&mut self, query_sql: &str) -> Vec<String> {
        let idents = sqltext::identifiers(query_sql);
        let mut kept_rules = Vec::new();
        let mut kept_conds = Vec::new();
        let mut dropped = Vec::new();
        for (i, rule) in self.rules.drain(..).enumerate() {
            if mentions_any(&rule, &idents) {
                dropped.push(rule);
            } else {
                kept_rules.push(rule);
                kept_conds.push(self.conditions.get(i).cloned().flatten());
            }
        }
        self.rules = kept_rules;
        self.conditions = kept_conds;
        dropped
    }
}

/// True when `text` contains any of `idents` as a whole word (case-insensitive).
pub fn mentions_any(text: &str, idents: &BTreeSet<String>) -> bool {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .any(|w| idents.contains(&w.to_ascii_lowercase()))
}

/// Final record for one query: the best rewrite found and whether it is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub query: Query,
    pub rewrite: CandidateRewrite,
    pub explanation: Explanation,
    pub equivalent: bool,
    pub speedup: f64,
    pub accepted: bool,
}

impl RewriteOutcome {
    /// Builds an outcome, deriving `accepted` from equivalence and `theta`.
    pub fn evaluated(
        query: Query,
        rewrite: CandidateRewrite,
        explanation: Explanation,
        equivalent: bool,
        speedup: f64,
        theta: f64,
    ) -> Self {
        let accepted = equivalent && speedup > theta && !explanation.rules.is_empty();
        RewriteOutcome {
            query,
            rewrite,
            explanation,
            equivalent,
            speedup,
            accepted,
        }
    }

    /// The original query kept as-is: speedup 1.0, not accepted.
    pub fn fallback(query: Query) -> Self {
        let rewrite = CandidateRewrite::suggested(query.id.clone(), query.sql.clone());
        RewriteOutcome {
            query,
            rewrite,
            explanation: Explanation::default(),
            equivalent: false,
            speedup: 1.0,
            accepted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSnapshot {
    pub wall_time_remaining: f64,
    pub money_remaining: f64,
    pub llm_calls_made: u64,
    pub db_runs_made: u64,
}

impl BudgetSnapshot {
    pub fn exhausted(&self) -> bool {
        self.wall_time_remaining <= 0.0 || self.money_remaining <= 0.0
    }
}

/// Remaining time and money. Cloning shares the same underlying allowance.
///
/// Either quantity may be `f64::INFINITY` for "unlimited". Decrements
/// saturate at zero.
#[derive(Debug, Clone)]
pub struct Budget {
    inner: Arc<Mutex<BudgetSnapshot>>,
}

impl Budget {
    pub fn new(wall_time_seconds: f64, money: f64) -> Self {
        Budget {
            inner: Arc::new(Mutex::new(BudgetSnapshot {
                wall_time_remaining: wall_time_seconds.max(0.0),
                money_remaining: money.max(0.0),
                llm_calls_made: 0,
                db_runs_made: 0,
            })),
        }
    }

    pub fn unlimited() -> Self {
        Budget::new(f64::INFINITY, f64::INFINITY)
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        *self.inner.lock()
    }

    pub fn exhausted(&self) -> bool {
        self.snapshot().exhausted()
    }

    pub fn charge_llm(&self, seconds: f64, cost: f64) {
        let mut b = self.inner.lock();
        b.wall_time_remaining = saturating_sub(b.wall_time_remaining, seconds);
        b.money_remaining = saturating_sub(b.money_remaining, cost);
        b.llm_calls_made += 1;
    }

    pub fn charge_db(&self, seconds: f64) {
        let mut b = self.inner.lock();
        b.wall_time_remaining = saturating_sub(b.wall_time_remaining, seconds);
        b.db_runs_made += 1;
    }
}

fn saturating_sub(have: f64, spend: f64) -> f64 {
    let spend = if spend.is_finite() { spend.max(0.0) } else { 0.0 };
    (have - spend).max(0.0)
}
