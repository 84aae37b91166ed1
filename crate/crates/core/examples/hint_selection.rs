//! Ranks rule groups for a new query from its nearest solved neighbours.

use std::sync::Arc;

use llm_rewrite::embed::{EmbeddingProvider, HashingEmbedder};
use llm_rewrite::llm::{LlmGateway, Rates, ResponderBackend};
use llm_rewrite::model::QueryId;
use llm_rewrite::repo::{RepoServices, RuleRepository};

fn main() {
    // Every rule lands in its own group, so no model is consulted.
    let llm = LlmGateway::new(Arc::new(ResponderBackend::new(|_, _| Some("1. Unseen rule".into()))), Rates::default());
    let embedder = HashingEmbedder::default();
    let services = RepoServices::new(&embedder, &llm);
    let mut repo = RuleRepository::new(embedder.dim());

    let solved = [
        ("q1", "select c.name from customer c where c.id in (select customer_id from sales where year = 2001)", "Replace subqueries with joins", 2.0),
        ("q2", "select year, sum(net_paid) from sales where channel = 's' union all select year, sum(net_paid) from sales where channel = 'w'", "Merge union branches over one relation into a single scan", 3.0),
        ("q3", "select c.name from customer c where exists (select 1 from sales s where s.customer_id = c.id)", "Replace subqueries with joins", 1.5),
    ];
    for (id, sql, rule, speedup) in solved {
        let qid = QueryId::new(id);
        // A rule seen before gains an observation instead of a duplicate entry.
        let rule_id = match repo.find_by_description(rule).map(|r| r.rule_id.clone()) {
            Some(id) => {
                repo.update_benefit(&id, speedup).unwrap();
                id
            }
            None => repo.add_rule(&services, rule, None, &qid, speedup).unwrap().rule_id,
        };
        repo.record_query(&qid, &embedder.embed(sql).unwrap(), &[rule_id]).unwrap();
    }

    let target = embedder
        .embed("select c.name from customer c where c.id in (select customer_id from sales where channel = 'c')")
        .unwrap();
    let pick = repo.select_hints(&target, 2, 2);
    for n in &pick.neighbors {
        println!("neighbour {} distance={:.4} weight={:.4}", n.query_id, n.distance, n.weight);
    }
    for s in &pick.ranking {
        println!("group {} score={:.4}", s.group_id, s.score);
    }
    println!("hints: {:?}", pick.descriptions());
}
