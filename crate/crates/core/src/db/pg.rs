use std::time::{Duration, Instant};

use parking_lot::Mutex;
use postgres::types::Type;
use postgres::{Client, NoTls, SimpleQueryMessage};

use super::{render_float, DbError, DbTarget, ExplainResult, ResultTable, SqlEngine};

const QUERY_CANCELED: &str = "57014";

/// PostgreSQL over the standard client protocol. One connection per engine;
/// calls on the same engine are serialized.
pub struct PgEngine {
    target: DbTarget,
    client: Mutex<Client>,
}

fn classify(e: postgres::Error, timeout: Duration) -> DbError {
    match e.as_db_error() {
        Some(db) if db.code().code() == QUERY_CANCELED => DbError::Timeout {
            seconds: timeout.as_secs_f64(),
        },
        Some(db) => DbError::Sql(db.to_string()),
        None => DbError::Connection(e.to_string()),
    }
}

fn is_float_type(t: &Type) -> bool {
    *t == Type::FLOAT4 || *t == Type::FLOAT8 || *t == Type::NUMERIC
}

impl PgEngine {
    pub fn connect(target: &DbTarget) -> Result<Self, DbError> {
        let client = target
            .pg_config()?
            .connect(NoTls)
            .map_err(|e| DbError::Connection(format!("{}:{}/{}: {e}", target.host, target.port, target.database)))?;
        Ok(PgEngine {
            target: target.clone(),
            client: Mutex::new(client),
        })
    }

    fn with_client<T>(&self, f: impl FnOnce(&mut Client) -> Result<T, DbError>) -> Result<T, DbError> {
        let mut guard = self.client.lock();
        if guard.is_closed() {
            *guard = self
                .target
                .pg_config()?
                .connect(NoTls)
                .map_err(|e| DbError::Connection(e.to_string()))?;
        }
        f(&mut guard)
    }

    /// Runs statements outside any read-only guard. For setup code only.
    pub fn batch_execute(&self, sql: &str) -> Result<(), DbError> {
        self.with_client(|c| c.batch_execute(sql).map_err(|e| classify(e, Duration::ZERO)))
    }

    /// First column of the first row, as text.
    pub fn query_scalar(&self, sql: &str) -> Result<Option<String>, DbError> {
        self.with_client(|c| {
            let msgs = c.simple_query(sql).map_err(|e| classify(e, Duration::ZERO))?;
            for m in msgs {
                if let SimpleQueryMessage::Row(r) = m {
                    return Ok(r.get(0).map(str::to_string));
                }
            }
            Ok(None)
        })
    }

    /// Prepares `sql` (rejecting multi-statement text) and runs it in a
    /// read-only transaction with a statement timeout. The transaction is
    /// always rolled back.
    fn run_guarded<T>(
        &self,
        sql: &str,
        timeout: Duration,
        f: impl FnOnce(&mut postgres::Transaction<'_>, &[Type]) -> Result<T, postgres::Error>,
    ) -> Result<T, DbError> {
        self.with_client(|c| {
            let stmt = c.prepare(sql).map_err(|e| classify(e, timeout))?;
            let types: Vec<Type> = stmt.columns().iter().map(|col| col.type_().clone()).collect();
            let mut tx = c
                .build_transaction()
                .read_only(true)
                .start()
                .map_err(|e| classify(e, timeout))?;
            let ms = timeout.as_millis().clamp(1, i32::MAX as u128);
            tx.batch_execute(&format!("SET LOCAL statement_timeout = {ms}"))
                .map_err(|e| classify(e, timeout))?;
            let out = f(&mut tx, &types).map_err(|e| classify(e, timeout));
            let _ = tx.rollback();
            out
        })
    }
}

fn parse_total_cost(plan_json: &str) -> Option<f64> {
    let v: serde_json::Value = serde_json::from_str(plan_json).ok()?;
    v.get(0)?.get("Plan")?.get("Total Cost")?.as_f64()
}

impl SqlEngine for PgEngine {
    fn target(&self) -> &DbTarget {
        &self.target
    }

    fn explain(&self, sql: &str) -> Result<ExplainResult, DbError> {
        let explain_sql = format!("EXPLAIN (FORMAT JSON) {sql}");
        let res = self.run_guarded(&explain_sql, Duration::from_secs(60), |tx, _| {
            let msgs = tx.simple_query(&explain_sql)?;
            Ok(msgs.into_iter().find_map(|m| match m {
                SimpleQueryMessage::Row(r) => r.get(0).map(str::to_string),
                _ => None,
            }))
        });
        match res {
            Ok(Some(json)) => match parse_total_cost(&json) {
                Some(cost) => Ok(ExplainResult::success(cost)),
                None => Ok(ExplainResult::failure(format!("unreadable plan: {json}"))),
            },
            Ok(None) => Ok(ExplainResult::failure("EXPLAIN returned no plan")),
            Err(DbError::Connection(m)) => Err(DbError::Connection(m)),
            Err(e) => Ok(ExplainResult::failure(e.to_string())),
        }
    }

    fn execute_rows(&self, sql: &str, timeout: Duration) -> Result<ResultTable, DbError> {
        let columns: Vec<String> = self.with_client(|c| {
            let stmt = c.prepare(sql).map_err(|e| classify(e, timeout))?;
            Ok(stmt.columns().iter().map(|col| col.name().to_string()).collect())
        })?;
        let rows = self.run_guarded(sql, timeout, |tx, types| {
            let msgs = tx.simple_query(sql)?;
            let mut rows = Vec::new();
            for m in msgs {
                if let SimpleQueryMessage::Row(r) = m {
                    let mut row = Vec::with_capacity(r.len());
                    for i in 0..r.len() {
                        let cell = r.get(i).map(|text| {
                            if types.get(i).is_some_and(is_float_type) {
                                text.parse::<f64>().map(render_float).unwrap_or_else(|_| text.to_string())
                            } else {
                                text.to_string()
                            }
                        });
                        row.push(cell);
                    }
                    rows.push(row);
                }
            }
            Ok(rows)
        })?;
        Ok(ResultTable::new(columns, rows))
    }

    fn execute_timed(&self, sql: &str, timeout: Duration) -> Result<Duration, DbError> {
        self.run_guarded(sql, timeout, |tx, _| {
            let started = Instant::now();
            tx.simple_query(sql)?;
            Ok(started.elapsed())
        })
    }
}
