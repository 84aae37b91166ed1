//! Database access: EXPLAIN probing, timed execution with cache hygiene,
//! result materialization, and seeded sample instances.

mod fixture;
mod pg;
mod seed;

use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{FixtureAnswer, FixtureEngine};
pub use pg::PgEngine;
pub use seed::{build_instance, build_instances, ColumnDomain, SeedSpec, TableSpec};

#[derive(Debug, Error)]
pub enum DbError {
    #[error("connection error: {0}")]
    Connection(String),

    #[error("statement timed out after {seconds:.3}s")]
    Timeout { seconds: f64 },

    #[error("execution error: {0}")]
    Execution(String),

    #[error("{0}")]
    Sql(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRole {
    Benchmark,
    EquivalenceSample,
}

/// Where to connect. The password is never stored; `password_env` names the
/// environment variable holding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbTarget {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub database: String,
    #[serde(default = "default_user")]
    pub user: String,
    #[serde(default)]
    pub password_env: Option<String>,
    #[serde(default = "default_role")]
    pub role: TargetRole,
}

fn default_host() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    5432
}
fn default_user() -> String {
    "postgres".into()
}
fn default_role() -> TargetRole {
    TargetRole::Benchmark
}

impl DbTarget {
    pub fn new(host: &str, port: u16, database: &str, user: &str, role: TargetRole) -> Self {
        DbTarget {
            host: host.into(),
            port,
            database: database.into(),
            user: user.into(),
            password_env: None,
            role,
        }
    }

    /// Same server and credentials, different database.
    pub fn with_database(&self, database: &str, role: TargetRole) -> Self {
        DbTarget {
            database: database.into(),
            role,
            ..self.clone()
        }
    }

    pub fn pg_config(&self) -> Result<postgres::Config, DbError> {
        let mut c = postgres::Config::new();
        c.host(&self.host).port(self.port).dbname(&self.database).user(&self.user);
        c.connect_timeout(Duration::from_secs(5));
        if let Some(var) = &self.password_env {
            let pw = std::env::var(var)
                .map_err(|_| DbError::Connection(format!("password variable {var} is not set")))?;
            c.password(pw);
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResult {
    pub ok: bool,
    pub total_cost: Option<f64>,
    pub error_message: Option<String>,
}

impl ExplainResult {
    pub fn success(total_cost: f64) -> Self {
        ExplainResult {
            ok: true,
            total_cost: Some(total_cost),
            error_message: None,
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        ExplainResult {
            ok: false,
            total_cost: None,
            error_message: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyMeasurement {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub cache_reset_between_runs: bool,
    /// Some run hit the timeout; its entry equals the timeout.
    pub timed_out: bool,
}

impl LatencyMeasurement {
    pub fn variance(&self) -> f64 {
        if self.runs.len() < 2 {
            return 0.0;
        }
        let n = self.runs.len() as f64;
        self.runs.iter().map(|r| (r - self.mean).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Materialized result set. `None` cells are SQL NULL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<String>>>) -> Self {
        ResultTable { columns, rows }
    }

    pub fn sorted_rows(&self) -> Vec<Vec<Option<String>>> {
        let mut r = self.rows.clone();
        r.sort();
        r
    }
}

/// Canonical text for a floating-point cell: 12 significant digits.
pub fn render_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Infinity".into() } else { "-Infinity".into() };
    }
    let x = if x == 0.0 { 0.0 } else { x };
    let s = format!("{x:.11e}");
    // Rounding can turn a tiny negative into -0.
    if s.starts_with("-0.00000000000e") {
        s[1..].to_string()
    } else {
        s
    }
}

pub trait SqlEngine: Send + Sync {
    fn target(&self) -> &DbTarget;

    /// Plans `sql` without running it. SQL problems come back as
    /// `ok = false`; only connection trouble is an `Err`.
    fn explain(&self, sql: &str) -> Result<ExplainResult, DbError>;

    fn execute_rows(&self, sql: &str, timeout: Duration) -> Result<ResultTable, DbError>;

    /// Runs `sql` to completion, discarding rows, and returns elapsed time.
    fn execute_timed(&self, sql: &str, timeout: Duration) -> Result<Duration, DbError>;
}

pub trait CacheReset: Send + Sync {
    fn reset(&self) -> Result<(), DbError>;

    fn is_noop(&self) -> bool {
        false
    }
}

pub struct NoopReset;

impl CacheReset for NoopReset {
    fn reset(&self) -> Result<(), DbError> {
        Ok(())
    }

    fn is_noop(&self) -> bool {
        true
    }
}

/// Runs a shell command (e.g. a service restart plus page-cache drop).
pub struct ShellReset {
    pub command: String,
}

impl CacheReset for ShellReset {
    fn reset(&self) -> Result<(), DbError> {
        let status = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .status()
            .map_err(|e| DbError::Execution(format!("cache reset hook failed to start: {e}")))?;
        if status.success() {
            Ok(())
        } else {
            Err(DbError::Execution(format!("cache reset hook exited with {status}")))
        }
    }
}

static TIMING: Mutex<()> = Mutex::new(());

/// Times `sql` `repetitions` times, resetting caches before each run.
///
/// Timed runs are serialized process-wide. A run that hits `timeout` is
/// recorded at the timeout and flags the measurement.
pub fn run_timed(
    engine: &dyn SqlEngine,
    sql: &str,
    repetitions: usize,
    timeout: Duration,
    reset: &dyn CacheReset,
) -> Result<LatencyMeasurement, DbError> {
    if repetitions == 0 {
        return Err(DbError::Execution("repetitions must be at least 1".into()));
    }
    let probe = engine.explain(sql)?;
    if !probe.ok {
        return Err(DbError::Sql(probe.error_message.unwrap_or_default()));
    }
    let _guard = TIMING.lock().unwrap_or_else(|p| p.into_inner());
    let mut runs = Vec::with_capacity(repetitions);
    let mut timed_out = false;
    for _ in 0..repetitions {
        reset.reset()?;
        match engine.execute_timed(sql, timeout) {
            Ok(d) => runs.push(d.as_secs_f64()),
            Err(DbError::Timeout { .. }) => {
                timed_out = true;
                runs.push(timeout.as_secs_f64());
            }
            Err(e) => return Err(e),
        }
    }
    let mean = runs.iter().sum::<f64>() / runs.len() as f64;
    Ok(LatencyMeasurement {
        runs,
        mean,
        cache_reset_between_runs: !reset.is_noop(),
        timed_out,
    })
}
