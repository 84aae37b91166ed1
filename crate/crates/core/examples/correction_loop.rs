//! Runs the semantic and syntax correction loops against a scripted model
//! and a fixture engine that rejects one misspelled alias.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use llm_rewrite::corrector::Corrector;
use llm_rewrite::db::{FixtureAnswer, FixtureEngine};
use llm_rewrite::llm::{LlmGateway, Rates, ResponderBackend, TemplateId};
use llm_rewrite::model::{CandidateRewrite, Query};

fn main() {
    let query = Query::new("q1", "select distinct e.name from emp e join bonus b on b.emp_id = e.id").unwrap();
    let checks = Arc::new(AtomicUsize::new(0));
    let seen = checks.clone();
    // The first check finds the missing DISTINCT; the fix reintroduces it
    // behind a typo that only the database notices.
    let backend = ResponderBackend::new(move |t, _| match t {
        TemplateId::SemanticCheck => Some(if seen.fetch_add(1, Ordering::SeqCst) == 0 {
            "They are not equivalent: q2 keeps duplicate names.".into()
        } else {
            "They are equivalent.".into()
        }),
        TemplateId::SemanticFix => {
            Some("```sql\nselect distinct em.name from emp e where e.id in (select emp_id from bonus)\n```".into())
        }
        TemplateId::SyntaxFix => {
            Some("```sql\nselect distinct e.name from emp e where e.id in (select emp_id from bonus)\n```".into())
        }
        _ => None,
    });
    let llm = LlmGateway::new(Arc::new(backend), Rates::default());
    let engine = FixtureEngine::new(|sql| {
        if sql.contains("em.") {
            Err("missing FROM-clause entry for table \"em\"".into())
        } else {
            Ok(FixtureAnswer::scalar("1").with_cost(10.0))
        }
    });

    let candidate = CandidateRewrite::suggested(query.id.clone(), "select e.name from emp e where e.id in (select emp_id from bonus)");
    let corrector = Corrector::new(&llm, &engine);
    let (fixed, traces) = corrector.correct(&query, candidate).unwrap();
    for trace in &traces {
        println!(
            "{:?}: converged={} iterations={}",
            trace.stage, trace.converged, trace.iterations_used
        );
        for step in &trace.iterations {
            println!("  {:?}\n    {}", step.outcome, step.candidate_sql);
        }
    }
    println!("final (revision {}): {}", fixed.revision, fixed.sql);
    println!("model calls: {}", llm.calls());
}
