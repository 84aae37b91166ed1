//! Measures a rewrite under both metrics: planner cost and timed runs.

use std::sync::Arc;
use std::time::Duration;

use llm_rewrite::db::{FixtureAnswer, FixtureEngine, NoopReset, SqlEngine};
use llm_rewrite::evaluator::{Evaluator, EvaluatorConfig, MeasureMode};

fn engine() -> Arc<dyn SqlEngine> {
    Arc::new(FixtureEngine::new(|sql| {
        let (cost, ms) = if sql.contains("id + 0") { (1693.0, 30) } else { (8.3, 2) };
        Ok(FixtureAnswer::scalar("1")
            .with_cost(cost)
            .with_latency(Duration::from_millis(ms)))
    }))
}

fn main() {
    let original = "select v from big where id + 0 = 4242";
    let rewrite = "select v from big where id = 4242";
    for mode in [MeasureMode::ExplainCost, MeasureMode::Latency] {
        let config = EvaluatorConfig {
            mode,
            ..EvaluatorConfig::default()
        };
        let evaluator = Evaluator::new(engine(), vec![(1, engine())], Arc::new(NoopReset), config);
        let v = evaluator.measure_speedup(original, rewrite, &[]).unwrap();
        println!(
            "{:?}: original={:.4} rewrite={:.4} speedup={:.2} {:?}",
            v.mode, v.original_metric, v.rewrite_metric, v.speedup, v.classification
        );
        let back = evaluator.measure_speedup(rewrite, original, &[]).unwrap();
        println!("  reversed: speedup={:.4} {:?}", back.speedup, back.classification);
    }
}
