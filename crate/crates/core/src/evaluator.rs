//! Equivalence by differential testing over seeded sample instances, and
//! speedup by measured latency or EXPLAIN cost.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::db::{run_timed, CacheReset, DbError, ResultTable, SqlEngine};
use crate::error::Result;
use crate::model::{canonicalize_sql, Budget, DEFAULT_THETA};
use crate::sqltext;

/// A rewrite slower than this factor of the original is a regression.
pub const REGRESSION_FACTOR: f64 = 1.05;

const MIN_METRIC: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMode {
    Latency,
    ExplainCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub equivalent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub instances_tested: usize,
    pub ordered_comparison: bool,
    /// ORDER BY detection was not sure about the outer query block.
    pub order_uncertain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Regression,
    Neutral,
    Improved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVerdict {
    pub mode: MeasureMode,
    pub original_metric: f64,
    pub rewrite_metric: f64,
    pub speedup: f64,
    pub classification: Classification,
    pub rewrite_timed_out: bool,
}

impl PerformanceVerdict {
    pub fn from_metrics(mode: MeasureMode, original: f64, rewrite: f64, theta: f64) -> Self {
        let original_metric = original.max(MIN_METRIC);
        let rewrite_metric = rewrite.max(MIN_METRIC);
        let speedup = original_metric / rewrite_metric;
        let classification = if rewrite_metric > REGRESSION_FACTOR * original_metric {
            Classification::Regression
        } else if speedup > theta {
            Classification::Improved
        } else {
            Classification::Neutral
        };
        PerformanceVerdict {
            mode,
            original_metric,
            rewrite_metric,
            speedup,
            classification,
            rewrite_timed_out: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub mode: MeasureMode,
    pub theta: f64,
    pub repetitions: usize,
    /// Rewrite timeout as a multiple of the original's mean latency.
    pub timeout_factor: f64,
    pub timeout_floor: Duration,
    pub timeout_cap: Duration,
    /// Per-statement limit on sample instances.
    pub sample_timeout: Duration,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            mode: MeasureMode::Latency,
            theta: DEFAULT_THETA,
            repetitions: 3,
            timeout_factor: 10.0,
            timeout_floor: Duration::from_secs(1),
            timeout_cap: Duration::from_secs(300),
            sample_timeout: Duration::from_secs(30),
        }
    }
}

pub struct Evaluator {
    benchmark: Arc<dyn SqlEngine>,
    samples: Vec<(u64, Arc<dyn SqlEngine>)>,
    reset: Arc<dyn CacheReset>,
    pub config: EvaluatorConfig,
    original_metrics: Mutex<HashMap<(String, bool), f64>>,
}

fn charge(budgets: &[&Budget], started: Instant) {
    let s = started.elapsed().as_secs_f64();
    for b in budgets {
        b.charge_db(s);
    }
}

fn render_row(row: &[Option<String>]) -> String {
    let cells: Vec<String> = row
        .iter()
        .map(|c| c.clone().unwrap_or_else(|| "NULL".into()))
        .collect();
    format!("({})", cells.join(", "))
}

/// Compares two result tables; `None` means they agree.
pub fn diff_tables(a: &ResultTable, b: &ResultTable, ordered: bool) -> Option<String> {
    if a.columns.len() != b.columns.len() {
        return Some(format!("column count {} vs {}", a.columns.len(), b.columns.len()));
    }
    for (i, (x, y)) in a.columns.iter().zip(&b.columns).enumerate() {
        if !x.eq_ignore_ascii_case(y) {
            return Some(format!("column {} named {x} vs {y}", i + 1));
        }
    }
    if a.rows.len() != b.rows.len() {
        return Some(format!("row count {} vs {}", a.rows.len(), b.rows.len()));
    }
    if ordered {
        for (i, (x, y)) in a.rows.iter().zip(&b.rows).enumerate() {
            if x != y {
                return Some(format!("row {} differs: {} vs {}", i + 1, render_row(x), render_row(y)));
            }
        }
        return None;
    }
    let (sa, sb) = (a.sorted_rows(), b.sorted_rows());
    if sa == sb {
        return None;
    }
    let (mut i, mut j) = (0, 0);
    while i < sa.len() && j < sb.len() {
        match sa[i].cmp(&sb[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                return Some(format!("row {} only in first result", render_row(&sa[i])));
            }
            std::cmp::Ordering::Greater => {
                return Some(format!("row {} only in second result", render_row(&sb[j])));
            }
        }
    }
    Some("result multisets differ".into())
}

impl Evaluator {
    pub fn new(
        benchmark: Arc<dyn SqlEngine>,
        samples: Vec<(u64, Arc<dyn SqlEngine>)>,
        reset: Arc<dyn CacheReset>,
        config: EvaluatorConfig,
    ) -> Self {
        Evaluator {
            benchmark,
            samples,
            reset,
            config,
            original_metrics: Mutex::new(HashMap::new()),
        }
    }

    pub fn benchmark(&self) -> &dyn SqlEngine {
        self.benchmark.as_ref()
    }

    pub fn instances(&self) -> usize {
        self.samples.len()
    }

    fn check_instance(engine: &dyn SqlEngine, q: &str, r: &str, ordered: bool, timeout: Duration) -> Option<String> {
        for (label, sql) in [("original", q), ("rewrite", r)] {
            match engine.explain(sql) {
                Ok(e) if e.ok => {}
                Ok(e) => return Some(format!("{label} does not plan: {}", e.error_message.unwrap_or_default())),
                Err(e) => return Some(format!("{label}: {e}")),
            }
        }
        let run = |sql: &str| engine.execute_rows(sql, timeout);
        match (run(q), run(r)) {
            (Ok(a), Ok(b)) => diff_tables(&a, &b, ordered),
            (Err(DbError::Timeout { .. }), _) | (_, Err(DbError::Timeout { .. })) => {
                Some("timed out; treated as not equivalent".into())
            }
            (Err(e), _) => Some(format!("original failed: {e}")),
            (_, Err(e)) => Some(format!("rewrite failed: {e}")),
        }
    }

    /// Runs both queries on every sample instance and compares results.
    /// Symmetric in its arguments; identical canonical text short-circuits.
    pub fn check_equivalence(&self, q: &str, r: &str, budgets: &[&Budget]) -> EquivalenceCheck {
        let (q_order, q_sure) = sqltext::outer_order_by(q);
        let (r_order, r_sure) = sqltext::outer_order_by(r);
        let ordered = q_order || r_order;
        let order_uncertain = !q_sure || !r_sure || q_order != r_order;
        if canonicalize_sql(q) == canonicalize_sql(r) {
            return EquivalenceCheck {
                equivalent: true,
                witness: None,
                instances_tested: 0,
                ordered_comparison: ordered,
                order_uncertain,
            };
        }
        let started = Instant::now();
        let timeout = self.config.sample_timeout;
        let diffs: Vec<Option<String>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .samples
                .iter()
                .map(|(_, eng)| s.spawn(move || Self::check_instance(eng.as_ref(), q, r, ordered, timeout)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Some("instance check panicked".into())))
                .collect()
        });
        charge(budgets, started);
        let witness = self
            .samples
            .iter()
            .zip(diffs)
            .find_map(|((seed, _), d)| d.map(|summary| Witness { seed: *seed, summary }));
        EquivalenceCheck {
            equivalent: witness.is_none() && !self.samples.is_empty(),
            witness: witness.or_else(|| {
                self.samples.is_empty().then(|| Witness {
                    seed: 0,
                    summary: "no sample instances configured".into(),
                })
            }),
            instances_tested: self.samples.len(),
            ordered_comparison: ordered,
            order_uncertain,
        }
    }

    fn metric(&self, sql: &str, timeout: Duration, budgets: &[&Budget]) -> Result<(f64, bool)> {
        let started = Instant::now();
        let out = match self.config.mode {
            MeasureMode::ExplainCost => {
                let e = self.benchmark.explain(sql)?;
                match (e.ok, e.total_cost) {
                    (true, Some(c)) => (c, false),
                    _ => return Err(DbError::Sql(e.error_message.unwrap_or_default()).into()),
                }
            }
            MeasureMode::Latency => {
                let m = run_timed(
                    self.benchmark.as_ref(),
                    sql,
                    self.config.repetitions,
                    timeout,
                    self.reset.as_ref(),
                )?;
                (m.mean, m.timed_out)
            }
        };
        charge(budgets, started);
        Ok(out)
    }

    /// The original query's metric, measured once per query text and mode.
    pub fn original_metric(&self, sql: &str, budgets: &[&Budget]) -> Result<f64> {
        let key = (canonicalize_sql(sql), self.config.mode == MeasureMode::Latency);
        if let Some(m) = self.original_metrics.lock().get(&key) {
            return Ok(*m);
        }
        let (m, _) = self.metric(sql, self.config.timeout_cap, budgets)?;
        self.original_metrics.lock().insert(key, m);
        Ok(m)
    }

    pub fn rewrite_timeout(&self, original_metric: f64) -> Duration {
        let t = Duration::from_secs_f64((original_metric * self.config.timeout_factor).min(1e9));
        t.clamp(self.config.timeout_floor, self.config.timeout_cap)
    }

    /// Speedup of `r` over `q` on the benchmark target.
    pub fn measure_speedup(&self, q: &str, r: &str, budgets: &[&Budget]) -> Result<PerformanceVerdict> {
        let original = self.original_metric(q, budgets)?;
        if canonicalize_sql(q) == canonicalize_sql(r) {
            return Ok(PerformanceVerdict::from_metrics(self.config.mode, original, original, self.config.theta));
        }
        let (rewrite, timed_out) = self.metric(r, self.rewrite_timeout(original), budgets)?;
        let mut v = PerformanceVerdict::from_metrics(self.config.mode, original, rewrite, self.config.theta);
        if timed_out {
            v.rewrite_timed_out = true;
            v.classification = Classification::Regression;
        }
        Ok(v)
    }
}
