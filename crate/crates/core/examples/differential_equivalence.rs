//! Compares two queries over several seeded instances and prints the first
//! instance where their results differ.

use std::sync::Arc;

use llm_rewrite::db::{FixtureAnswer, FixtureEngine, NoopReset, ResultTable, SqlEngine};
use llm_rewrite::evaluator::{Evaluator, EvaluatorConfig};

/// Instance `seed` holds names 1..=seed with "n1" duplicated; the candidate
/// that drops DISTINCT only differs where the duplicate exists.
fn instance(seed: u64) -> Arc<dyn SqlEngine> {
    Arc::new(FixtureEngine::new(move |sql| {
        let mut names: Vec<String> = (1..=seed).map(|i| format!("n{i}")).collect();
        if seed >= 2 && !sql.contains("distinct") {
            names.push("n1".into());
        }
        let rows = names.into_iter().map(|n| vec![Some(n)]).collect();
        Ok(FixtureAnswer::new(ResultTable::new(vec!["name".into()], rows)).with_cost(5.0))
    }))
}

fn main() {
    let samples = (1..=3).map(|s| (s, instance(s))).collect();
    let evaluator = Evaluator::new(instance(1), samples, Arc::new(NoopReset), EvaluatorConfig::default());
    let original = "select distinct e.name from emp e join bonus b on b.emp_id = e.id";
    for candidate in [
        "select distinct e.name from emp e where e.id in (select emp_id from bonus)",
        "select e.name from emp e join bonus b on b.emp_id = e.id",
    ] {
        let check = evaluator.check_equivalence(original, candidate, &[]);
        println!("{candidate}\n  equivalent={} instances={}", check.equivalent, check.instances_tested);
        if let Some(w) = check.witness {
            println!("  witness on seed {}: {}", w.seed, w.summary);
        }
    }
}
