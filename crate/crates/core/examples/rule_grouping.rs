//! Adds rules to an empty repository; a scripted model decides which new
//! rules join an existing group.

use std::sync::Arc;

use llm_rewrite::embed::{EmbeddingProvider, HashingEmbedder};
use llm_rewrite::llm::{LlmGateway, Rates, ResponderBackend, TemplateId};
use llm_rewrite::model::QueryId;
use llm_rewrite::repo::{RepoServices, RuleRepository};

fn main() {
    // Two rules about explicit join syntax are the same rule; nothing else is.
    let backend = ResponderBackend::new(|t, conv| match t {
        TemplateId::GroupPredict => {
            let prompt = conv.last_user_text()?;
            let (rule, options) = prompt.split_once("\nOptions:")?;
            let explicit = |s: &str| s.to_lowercase().contains("explicit join");
            Some(if explicit(rule) && explicit(options) { "2".into() } else { "1. Unseen rule".into() })
        }
        _ => None,
    });
    let llm = LlmGateway::new(Arc::new(backend), Rates::default());
    let embedder = HashingEmbedder::default();
    let services = RepoServices::new(&embedder, &llm);
    let mut repo = RuleRepository::new(embedder.dim());

    let rules = [
        ("Replace implicit joins with explicit joins", 1.8),
        ("Use explicit join syntax instead of comma-separated tables in the from clause", 1.1),
        ("Pre-aggregate rows in a subquery before joining", 2.5),
        ("Replace correlated subqueries with window functions", 3.0),
    ];
    for (i, (rule, speedup)) in rules.into_iter().enumerate() {
        let added = repo
            .add_rule(&services, rule, None, &QueryId::new(format!("q{i}")), speedup)
            .unwrap();
        println!("{rule:?} -> {:?} (new group: {})", added.group_id, added.new_group);
    }

    println!();
    for g in repo.stats().group_details {
        println!("{} size={} benefit={:.3} {}", g.group_id, g.size, g.benefit, g.representative);
    }
    println!("model calls: {}", llm.calls());
}
