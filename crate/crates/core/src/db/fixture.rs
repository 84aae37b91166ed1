use std::time::Duration;

use super::{DbError, DbTarget, ExplainResult, ResultTable, SqlEngine, TargetRole};

/// What a [`FixtureEngine`] reports for one statement.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureAnswer {
    pub cost: f64,
    pub latency: Duration,
    pub table: ResultTable,
}

impl FixtureAnswer {
    pub fn new(table: ResultTable) -> Self {
        FixtureAnswer {
            cost: 1.0,
            latency: Duration::ZERO,
            table,
        }
    }

    /// A one-column, one-row answer.
    pub fn scalar(value: &str) -> Self {
        Self::new(ResultTable::new(vec!["?column?".into()], vec![vec![Some(value.into())]]))
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }
}

type Answerer = dyn Fn(&str) -> Result<FixtureAnswer, String> + Send + Sync;

/// An engine backed by a function from SQL text to an answer; `Err(text)`
/// plays the role of an engine error. Latencies are simulated, not slept.
pub struct FixtureEngine {
    target: DbTarget,
    answer: Box<Answerer>,
}

impl FixtureEngine {
    pub fn new(answer: impl Fn(&str) -> Result<FixtureAnswer, String> + Send + Sync + 'static) -> Self {
        FixtureEngine {
            target: DbTarget::new("fixture", 0, "fixture", "fixture", TargetRole::Benchmark),
            answer: Box::new(answer),
        }
    }

    pub fn with_target(mut self, target: DbTarget) -> Self {
        self.target = target;
        self
    }
}

impl SqlEngine for FixtureEngine {
    fn target(&self) -> &DbTarget {
        &self.target
    }

    fn explain(&self, sql: &str) -> Result<ExplainResult, DbError> {
        Ok(match (self.answer)(sql) {
            Ok(a) => ExplainResult::success(a.cost),
            Err(msg) => ExplainResult::failure(msg),
        })
    }

    fn execute_rows(&self, sql: &str, timeout: Duration) -> Result<ResultTable, DbError> {
        let a = (self.answer)(sql).map_err(DbError::Sql)?;
        if a.latency > timeout {
            return Err(DbError::Timeout {
                seconds: timeout.as_secs_f64(),
            });
        }
        Ok(a.table)
    }

    fn execute_timed(&self, sql: &str, timeout: Duration) -> Result<Duration, DbError> {
        let a = (self.answer)(sql).map_err(DbError::Sql)?;
        if a.latency > timeout {
            return Err(DbError::Timeout {
                seconds: timeout.as_secs_f64(),
            });
        }
        Ok(a.latency)
    }
}
