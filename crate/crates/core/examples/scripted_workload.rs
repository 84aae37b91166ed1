//! A full offline run: three queries, a scripted model, fixture databases.
//! The first round solves one query; its rule becomes a hint that solves the
//! other two in the next round.

use std::sync::Arc;

use llm_rewrite::db::{FixtureAnswer, FixtureEngine, NoopReset, SqlEngine};
use llm_rewrite::embed::{EmbeddingProvider, HashingEmbedder};
use llm_rewrite::evaluator::{Evaluator, EvaluatorConfig, MeasureMode};
use llm_rewrite::llm::{LlmGateway, Rates, ResponderBackend, TemplateId};
use llm_rewrite::model::Query;
use llm_rewrite::orchestrator::{RunConfig, Workbench};
use llm_rewrite::repo::RuleRepository;

const RULE: &str = "Replace a UNION ALL of filtered scans over one relation with a single scan and a combined filter";

/// Unions cost 30, merged scans 10.
fn engine() -> Arc<dyn SqlEngine> {
    Arc::new(FixtureEngine::new(|sql| {
        let cost = if sql.contains("union all") { 30.0 } else { 10.0 };
        Ok(FixtureAnswer::scalar("1").with_cost(cost))
    }))
}

fn merged(sql: &str) -> String {
    let head = sql.split(" where ").next().unwrap_or(sql);
    format!("{head} where channel in ('s', 'w')")
}

fn main() {
    let backend = ResponderBackend::new(|t, conv| {
        let prompt = conv.last_user_text()?;
        let query = prompt.lines().next()?;
        match t {
            // Without hints only the sales query is recognised.
            TemplateId::ZeroShotRewrite if query.contains("from sales ") => {
                Some(format!("```sql\n{}\n```\n- {RULE}", merged(query)))
            }
            TemplateId::ZeroShotRewrite => Some(format!("```sql\n{query}\n```")),
            TemplateId::HintedRewrite => Some(format!("```sql\n{}\n```\n- {RULE}", merged(query))),
            TemplateId::SemanticCheck => Some("They are equivalent.".into()),
            TemplateId::ConditionElicit => Some("The union branches read one relation and differ only in their filters.".into()),
            _ => None,
        }
    });
    let llm = LlmGateway::new(Arc::new(backend), Rates::default());
    let embedder = HashingEmbedder::default();
    let config = EvaluatorConfig {
        mode: MeasureMode::ExplainCost,
        ..EvaluatorConfig::default()
    };
    let samples = (1..=3).map(|s| (s, engine())).collect();
    let evaluator = Evaluator::new(engine(), samples, Arc::new(NoopReset), config);
    let mut repo = RuleRepository::new(embedder.dim());

    let queries = [
        ("q1", "select id from sales where channel = 's' union all select id from sales where channel = 'w'"),
        ("q2", "select id from returns where channel = 's' union all select id from returns where channel = 'w'"),
        ("q3", "select id from orders where channel = 's' union all select id from orders where channel = 'w'"),
    ]
    .into_iter()
    .map(|(id, sql)| Query::new(id, sql).unwrap())
    .collect();
    let run = RunConfig {
        zero_shot_rounds: 1,
        max_total_rounds: 3,
        ..RunConfig::default()
    };
    let out = Workbench::new(&llm, &embedder, &evaluator, run)
        .rewrite_workload(queries, &mut repo)
        .unwrap();
    for o in &out.outcomes {
        println!("{}: speedup {:.2} accepted={}\n  {}", o.query.id, o.speedup, o.accepted, o.rewrite.sql);
    }
    println!();
    print!("{}", out.report.to_markdown());
}
