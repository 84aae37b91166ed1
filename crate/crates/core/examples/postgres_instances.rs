//! Builds three seeded PostgreSQL instances and checks a rewrite on them.
//!
//! Needs a local server: `REWRITE_PG_URL=host:port` (default 127.0.0.1:5432,
//! user `postgres`, no password).

use std::sync::Arc;

use llm_rewrite::db::{build_instance, build_instances, DbTarget, NoopReset, PgEngine, SeedSpec, SqlEngine, TargetRole};
use llm_rewrite::evaluator::{Evaluator, EvaluatorConfig, MeasureMode};

const SCHEMA: &str = "
create table emp (id integer primary key, name text not null, dept integer);
create table bonus (id integer primary key, emp_id integer not null, amount numeric(8, 2));
";

const SEEDS: &str = r#"
seeds = [1, 2, 3]
[tables.emp]
rows = 200
[tables.emp.columns.dept]
min = 1
max = 5
[tables.bonus]
rows = 300
[tables.bonus.columns.emp_id]
min = 1
max = 200
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = std::env::var("REWRITE_PG_URL").unwrap_or_else(|_| "127.0.0.1:5432".into());
    let (host, port) = url.rsplit_once(':').ok_or("REWRITE_PG_URL must be host:port")?;
    let admin = DbTarget::new(host, port.parse()?, "postgres", "postgres", TargetRole::Benchmark);
    let spec = SeedSpec::from_toml(SEEDS)?;

    let bench = build_instance(&admin, "example_bench", SCHEMA, &spec, 7)?;
    let samples: Vec<(u64, Arc<dyn SqlEngine>)> = build_instances(&admin, "example_sample", SCHEMA, &spec)?
        .into_iter()
        .map(|(seed, t)| Ok((seed, Arc::new(PgEngine::connect(&t)?) as Arc<dyn SqlEngine>)))
        .collect::<Result<_, llm_rewrite::db::DbError>>()?;
    let config = EvaluatorConfig {
        mode: MeasureMode::ExplainCost,
        ..EvaluatorConfig::default()
    };
    let evaluator = Evaluator::new(Arc::new(PgEngine::connect(&bench)?), samples, Arc::new(NoopReset), config);

    let original = "select e.name from emp e where e.id in (select emp_id from bonus where amount > 100)";
    for candidate in [
        "select e.name from emp e where exists (select 1 from bonus b where b.emp_id = e.id and b.amount > 100)",
        "select e.name from emp e join bonus b on b.emp_id = e.id where b.amount > 100",
    ] {
        let check = evaluator.check_equivalence(original, candidate, &[]);
        println!("{candidate}\n  equivalent={}", check.equivalent);
        match check.witness {
            Some(w) => println!("  witness on seed {}: {}", w.seed, w.summary),
            None => {
                let v = evaluator.measure_speedup(original, candidate, &[])?;
                println!("  cost {:.2} -> {:.2}, speedup {:.3}", v.original_metric, v.rewrite_metric, v.speedup);
            }
        }
    }
    Ok(())
}
