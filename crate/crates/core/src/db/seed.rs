use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use postgres::NoTls;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DbError, DbTarget, TargetRole};

/// Row-generator spec for sample instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_rows")]
    pub default_rows: usize,
    #[serde(default = "default_null_fraction")]
    pub null_fraction: f64,
    #[serde(default)]
    pub tables: BTreeMap<String, TableSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub rows: Option<usize>,
    pub null_fraction: Option<f64>,
    /// Seeds whose instance leaves this table empty.
    #[serde(default)]
    pub empty_in_seeds: Vec<u64>,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnDomain>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnDomain {
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Explicit value pool (used verbatim as SQL literals after quoting).
    pub values: Option<Vec<String>>,
    /// Number of distinct generated text values.
    pub distinct: Option<usize>,
    pub null_fraction: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_rows() -> usize {
    50
}
fn default_null_fraction() -> f64 {
    0.1
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec {
            seeds: default_seeds(),
            default_rows: default_rows(),
            null_fraction: default_null_fraction(),
            tables: BTreeMap::new(),
        }
    }
}

impl SeedSpec {
    pub fn from_toml(text: &str) -> Result<Self, DbError> {
        toml::from_str(text).map_err(|e| DbError::Execution(format!("seed spec: {e}")))
    }
}

struct ColumnInfo {
    name: String,
    data_type: String,
    nullable: bool,
    unique: bool,
    max_len: Option<usize>,
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn quote_lit(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn generate_value(
    col: &ColumnInfo,
    dom: Option<&ColumnDomain>,
    rows: usize,
    row_idx: usize,
    rng: &mut ChaCha8Rng,
) -> Result<String, DbError> {
    if let Some(values) = dom.and_then(|d| d.values.as_ref()).filter(|v| !v.is_empty()) {
        let v = &values[rng.random_range(0..values.len())];
        return Ok(quote_lit(v));
    }
    let min = dom.and_then(|d| d.min);
    let max = dom.and_then(|d| d.max);
    let dt = col.data_type.as_str();
    let half = (rows / 2).max(1) as f64;
    Ok(match dt {
        "integer" | "smallint" | "bigint" => {
            if col.unique {
                (min.unwrap_or(1.0) as i64 + row_idx as i64).to_string()
            } else {
                let lo = min.unwrap_or(1.0) as i64;
                let hi = (max.unwrap_or(half) as i64).max(lo);
                rng.random_range(lo..=hi).to_string()
            }
        }
        "numeric" | "real" | "double precision" => {
            let lo = min.unwrap_or(0.0);
            let hi = max.unwrap_or(1000.0).max(lo);
            let x = lo + rng.random::<f64>() * (hi - lo);
            format!("{:.2}", x)
        }
        "boolean" => if rng.random_bool(0.5) { "true" } else { "false" }.to_string(),
        "date" | "timestamp without time zone" | "timestamp with time zone" => {
            let lo = min.unwrap_or(0.0) as i64;
            let hi = (max.unwrap_or(3650.0) as i64).max(lo);
            let days = rng.random_range(lo..=hi);
            format!("(date '2000-01-01' + {days})")
        }
        "text" | "character varying" | "character" => {
            let n = if col.unique {
                row_idx
            } else {
                let distinct = dom.and_then(|d| d.distinct).unwrap_or(half as usize).max(1);
                rng.random_range(0..distinct)
            };
            let mut s = format!("v{n}");
            if let Some(len) = col.max_len {
                s.truncate(len.max(1));
            }
            quote_lit(&s)
        }
        other => {
            return Err(DbError::Execution(format!(
                "cannot generate values for column {} of type {other}",
                col.name
            )))
        }
    })
}

fn columns_of(client: &mut postgres::Client) -> Result<BTreeMap<String, Vec<ColumnInfo>>, DbError> {
    let unique: BTreeSet<(String, String)> = client
        .query(
            "select kcu.table_name::text, kcu.column_name::text
             from information_schema.table_constraints tc
             join information_schema.key_column_usage kcu
               on tc.constraint_name = kcu.constraint_name and tc.table_schema = kcu.table_schema
             where tc.table_schema = 'public' and tc.constraint_type in ('PRIMARY KEY', 'UNIQUE')",
            &[],
        )
        .map_err(|e| DbError::Execution(e.to_string()))?
        .into_iter()
        .map(|r| (r.get(0), r.get(1)))
        .collect();
    let rows = client
        .query(
            "select c.table_name::text, c.column_name::text, c.data_type::text, c.is_nullable::text,
                    c.character_maximum_length::int
             from information_schema.columns c
             join information_schema.tables t
               on t.table_name = c.table_name and t.table_schema = c.table_schema
             where c.table_schema = 'public' and t.table_type = 'BASE TABLE'
             order by c.table_name, c.ordinal_position",
            &[],
        )
        .map_err(|e| DbError::Execution(e.to_string()))?;
    let mut out: BTreeMap<String, Vec<ColumnInfo>> = BTreeMap::new();
    for r in rows {
        let table: String = r.get(0);
        let name: String = r.get(1);
        let is_unique = unique.contains(&(table.clone(), name.clone()));
        let max_len: Option<i32> = r.get(4);
        out.entry(table).or_default().push(ColumnInfo {
            name,
            data_type: r.get(2),
            nullable: r.get::<_, String>(3) == "YES" && !is_unique,
            unique: is_unique,
            max_len: max_len.map(|l| l as usize),
        });
    }
    Ok(out)
}

fn populate(client: &mut postgres::Client, spec: &SeedSpec, seed: u64) -> Result<(), DbError> {
    let tables = columns_of(client)?;
    for name in spec.tables.keys() {
        if !tables.contains_key(name) {
            return Err(DbError::Execution(format!("seed spec names unknown table {name}")));
        }
    }
    let no_spec = TableSpec::default();
    for (table, cols) in &tables {
        let tspec = spec.tables.get(table).unwrap_or(&no_spec);
        if tspec.empty_in_seeds.contains(&seed) {
            continue;
        }
        let rows = tspec.rows.unwrap_or(spec.default_rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv(table));
        let col_list: Vec<String> = cols.iter().map(|c| quote_ident(&c.name)).collect();
        let header = format!("insert into {} ({}) values ", quote_ident(table), col_list.join(", "));
        let mut start = 0;
        while start < rows {
            let end = (start + 1000).min(rows);
            let mut stmt = header.clone();
            for i in start..end {
                if i > start {
                    stmt.push_str(", ");
                }
                stmt.push('(');
                for (j, col) in cols.iter().enumerate() {
                    if j > 0 {
                        stmt.push_str(", ");
                    }
                    let dom = tspec.columns.get(&col.name);
                    let nf = dom
                        .and_then(|d| d.null_fraction)
                        .or(tspec.null_fraction)
                        .unwrap_or(spec.null_fraction)
                        .clamp(0.0, 1.0);
                    if col.nullable && rng.random_bool(nf) {
                        stmt.push_str("NULL");
                    } else {
                        let v = generate_value(col, dom, rows, i, &mut rng)?;
                        let _ = write!(stmt, "{v}");
                    }
                }
                stmt.push(')');
            }
            client
                .batch_execute(&stmt)
                .map_err(|e| DbError::Execution(format!("seeding {table}: {e}")))?;
            start = end;
        }
    }
    client
        .batch_execute("ANALYZE")
        .map_err(|e| DbError::Execution(e.to_string()))
}

/// Creates database `name` from scratch, applies `ddl` and fills it with the
/// rows `spec` generates for `seed`.
pub fn build_instance(admin: &DbTarget, name: &str, ddl: &str, spec: &SeedSpec, seed: u64) -> Result<DbTarget, DbError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(DbError::Execution(format!("invalid database name {name:?}")));
    }
    let mut admin_client = admin
        .pg_config()?
        .connect(NoTls)
        .map_err(|e| DbError::Connection(e.to_string()))?;
    admin_client
        .batch_execute(&format!("DROP DATABASE IF EXISTS {name} WITH (FORCE)"))
        .and_then(|_| admin_client.batch_execute(&format!("CREATE DATABASE {name}")))
        .map_err(|e| DbError::Execution(format!("creating {name}: {e}")))?;
    let target = admin.with_database(name, TargetRole::EquivalenceSample);
    let mut client = target
        .pg_config()?
        .connect(NoTls)
        .map_err(|e| DbError::Connection(e.to_string()))?;
    client
        .batch_execute(ddl)
        .map_err(|e| DbError::Execution(format!("schema for {name}: {e}")))?;
    populate(&mut client, spec, seed)?;
    Ok(target)
}

/// One sample database per seed of `spec`, named `{prefix}_s{seed}`.
/// Existing databases of the same name are replaced.
pub fn build_instances(
    admin: &DbTarget,
    prefix: &str,
    ddl: &str,
    spec: &SeedSpec,
) -> Result<Vec<(u64, DbTarget)>, DbError> {
    spec.seeds
        .iter()
        .map(|&seed| build_instance(admin, &format!("{prefix}_s{seed}"), ddl, spec, seed).map(|t| (seed, t)))
        .collect()
}
