//! Run reports: a versioned JSON document and a markdown summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluator::MeasureMode;
use crate::llm::UsageTotals;
use crate::model::{QueryId, RewriteOutcome};
use crate::orchestrator::{Diagnosis, QueryAttempt, RoundSummary, RunConfig, RunState};
use crate::repo::RepoStats;

pub const SCHEMA_VERSION: u32 = 1;

/// Speedup thresholds for the summary table, with their labels.
pub const BUCKETS: [(f64, &str); 5] = [(1.1, ">10%"), (1.5, ">50%"), (2.0, ">2x"), (10.0, ">10x"), (100.0, ">100x")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AllAccepted,
    Converged,
    BudgetExhausted,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub query_id: QueryId,
    pub accepted: bool,
    pub speedup: f64,
    pub original_sql: String,
    pub rewrite_sql: String,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub query_id: QueryId,
    pub diagnosis: Diagnosis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoDelta {
    pub rules_added: usize,
    pub groups_added: usize,
    pub observations_added: usize,
}

impl RepoDelta {
    pub fn between(before: &RepoStats, after: &RepoStats) -> Self {
        RepoDelta {
            rules_added: after.rules.saturating_sub(before.rules),
            groups_added: after.groups.saturating_sub(before.groups),
            observations_added: after.observations.saturating_sub(before.observations),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub threshold: f64,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: MeasureMode,
    pub theta: f64,
    pub config: RunConfig,
    pub stop_reason: StopReason,
    pub converged: bool,
    pub truncated: bool,
    pub rounds: Vec<RoundSummary>,
    pub outcomes: Vec<OutcomeEntry>,
    pub failures: Vec<FailureEntry>,
    pub buckets: Vec<BucketRow>,
    pub usage: UsageTotals,
    pub repo: RepoStats,
    pub repo_delta: RepoDelta,
    pub attempts: Vec<QueryAttempt>,
}

/// Counts of speedups strictly above each bucket threshold.
pub fn speedup_buckets(speedups: &[f64]) -> Vec<BucketRow> {
    let n = speedups.len();
    BUCKETS
        .iter()
        .map(|&(threshold, label)| {
            let count = speedups.iter().filter(|s| **s > threshold).count();
            BucketRow {
                label: label.to_string(),
                threshold,
                count,
                percent: if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 },
            }
        })
        .collect()
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        config: &RunConfig,
        mode: MeasureMode,
        state: &RunState,
        outcomes: &[RewriteOutcome],
        usage: UsageTotals,
        repo: RepoStats,
        repo_delta: RepoDelta,
        stop_reason: StopReason,
    ) -> Self {
        let outcome_entries: Vec<OutcomeEntry> = outcomes
            .iter()
            .map(|o| OutcomeEntry {
                query_id: o.query.id.clone(),
                accepted: o.accepted,
                speedup: o.speedup,
                original_sql: o.query.sql.clone(),
                rewrite_sql: o.rewrite.sql.clone(),
                rules: o.explanation.rules.clone(),
            })
            .collect();
        let speedups: Vec<f64> = outcome_entries.iter().map(|o| o.speedup).collect();
        let failures = state
            .failures()
            .into_iter()
            .map(|(query_id, diagnosis, detail)| FailureEntry {
                query_id,
                diagnosis,
                detail,
            })
            .collect();
        RunReport {
            schema_version: SCHEMA_VERSION,
            mode,
            theta: config.theta,
            config: *config,
            stop_reason,
            converged: matches!(stop_reason, StopReason::Converged | StopReason::AllAccepted),
            truncated: state.truncated,
            rounds: state.rounds.clone(),
            outcomes: outcome_entries,
            failures,
            buckets: speedup_buckets(&speedups),
            usage,
            repo,
            repo_delta,
            attempts: state.attempts.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn accepted(&self) -> impl Iterator<Item = &OutcomeEntry> {
        self.outcomes.iter().filter(|o| o.accepted)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let accepted = self.accepted().count();
        let _ = writeln!(md, "# Rewrite report\n");
        let _ = writeln!(
            md,
            "{} queries, {} rewritten, {} rounds, stopped: {}{}.\n",
            self.outcomes.len(),
            accepted,
            self.rounds.len(),
            serde_json::to_value(self.stop_reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            if self.truncated { " (truncated)" } else { "" }
        );
        let _ = writeln!(md, "## Speedup distribution\n");
        let _ = writeln!(md, "| bucket | queries | share |");
        let _ = writeln!(md, "|---|---:|---:|");
        for b in &self.buckets {
            let _ = writeln!(md, "| {} | {} | {:.1}% |", b.label, b.count, b.percent);
        }
        let _ = writeln!(md, "\n## Queries\n");
        let _ = writeln!(md, "| query | speedup | accepted | rules |");
        let _ = writeln!(md, "|---|---:|---|---|");
        for o in &self.outcomes {
            let _ = writeln!(
                md,
                "| {} | {:.2}x | {} | {} |",
                o.query_id,
                o.speedup,
                if o.accepted { "yes" } else { "no" },
                o.rules.join("; ").replace('|', "\\|")
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(md, "\n## Not rewritten\n");
            for f in &self.failures {
                let d = serde_json::to_value(f.diagnosis)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                let _ = writeln!(md, "- {}: {}", f.query_id, d);
            }
        }
        let _ = writeln!(
            md,
            "\n## Usage\n\n{} model calls, {} tokens in, {} tokens out, cost {:.4}.",
            self.usage.calls, self.usage.tokens_in, self.usage.tokens_out, self.usage.cost
        );
        let _ = writeln!(
            md,
            "\n## Rule repository\n\n{} rules in {} groups (+{} rules, +{} groups this run).",
            self.repo.rules, self.repo.groups, self.repo_delta.rules_added, self.repo_delta.groups_added
        );
        if !self.repo.group_details.is_empty() {
            let _ = writeln!(md, "\n| group | size | benefit | representative |");
            let _ = writeln!(md, "|---|---:|---:|---|");
            for g in &self.repo.group_details {
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.3} | {} |",
                    g.group_id,
                    g.size,
                    g.benefit,
                    g.representative.replace('|', "\\|")
                );
            }
        }
        md
    }
}
